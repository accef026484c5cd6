"""Command-line pipeline: synth -> audit -> attack -> publish -> eval, plus theorem-check and sweep.

Every option can come from ``--config FILE`` (JSON object or key=value
lines) and be overridden by a flag of the same name.  Each command writes
its artifacts and a provenance.json under ``--out``.
"""
from __future__ import annotations

import argparse
import ctypes
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import attack as A
from . import evaluation as E
from . import publisher as P
from .errors import StructLeakError, UsageError
from .graph import apply_edge_mask, bfs_nodes, load_graph, write_edge_list, write_features, write_labels
from .homophily import LABEL_MODES, HomophilyConfig, audit
from .synth import SCENARIOS, generate, scenario

log = logging.getLogger("structleak")

SUBCOMMANDS = ("synth", "audit", "attack", "publish", "eval", "theorem-check", "sweep")


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    seed: int
    out: str
    data: str | None = None
    published: str | None = None
    # synthetic data
    scenario: str = "P"
    n: int = 1000
    known_fraction: float = 0.1
    # homophily / attack
    k: int = 2
    theta: int = 5
    hidden: int = 64
    lr: float = 1e-3
    epochs: int = 300
    update_interval: int = 10
    attack_variant: str = "full"
    role_input: str = "structure"
    label_mode: str = "pseudo-augmented"
    baseline: str | None = None
    # publisher
    variant: str = "full"
    gamma: float = 5.0
    eta: float = 5.0
    lam: float = 1.0
    eps: float = 0.5
    sampler_hidden: int = 64
    sampler_lr: float = 2e-3
    sampler_epochs: int = 200
    smoothing: float = 1.0
    attack_warmup: int = 50
    publish_mode: str = "bernoulli"
    # evaluation
    bandwidth: str = "median"
    split_ratio: float = 0.1
    # theorem check
    pairs: int = 100
    encoders: int = 10
    subgraph_size: int = 6
    layers: int = 2
    # sweep grids
    gammas: tuple = (5.0, 10.0, 20.0)
    etas: tuple = (5.0,)
    retentions: tuple = (0.9, 0.7, 0.5)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("gammas", "etas", "retentions"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return resolve(dict(d))

    def attack_config(self, **over) -> A.AttackConfig:
        kw = dict(hidden=self.hidden, hop_count=self.k, theta=self.theta, lr=self.lr, epochs=self.epochs,
                  update_interval=self.update_interval, variant=self.attack_variant, role_input=self.role_input,
                  seed=self.seed)
        kw.update(over)
        return A.AttackConfig(**kw)

    def sampler_config(self, **over) -> P.SamplerConfig:
        kw = dict(hidden=self.sampler_hidden, temperature=self.eps, gamma=self.gamma, eta=self.eta, lam=self.lam,
                  lr=self.sampler_lr, epochs=self.sampler_epochs, update_interval=self.update_interval,
                  theta=self.theta, smoothing=self.smoothing, label_mode=self.label_mode, variant=self.variant,
                  attack_warmup=self.attack_warmup, seed=self.seed)
        kw.update(over)
        return P.SamplerConfig(**kw)


FIELDS = {f.name: f for f in fields(RunConfig)}
TUPLE_KEYS = ("gammas", "etas", "retentions")
OPTIONAL_STR = ("data", "published", "baseline")
CHOICES = {"subcommand": SUBCOMMANDS, "scenario": tuple(SCENARIOS), "attack_variant": A.VARIANTS,
           "role_input": A.ROLE_INPUTS, "label_mode": LABEL_MODES, "baseline": (None, "majority-neighbor",
                                                                             "feature-mlp"),
           "variant": P.SAMPLER_VARIANTS, "publish_mode": P.PUBLISH_MODES}
POSITIVE_INT = ("n", "k", "hidden", "update_interval", "sampler_hidden", "pairs", "encoders", "subgraph_size",
                "layers")
NONNEG_INT = ("theta", "epochs", "sampler_epochs", "attack_warmup")
POSITIVE_FLOAT = ("lr", "eps", "sampler_lr", "smoothing")
NONNEG_FLOAT = ("gamma", "eta", "lam")


def _coerce(key, value):
    kind = FIELDS[key].type
    try:
        if key in TUPLE_KEYS:
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            return tuple(float(v) for v in value)
        if key in OPTIONAL_STR:
            return None if value in (None, "", "none", "null") else str(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise UsageError(f"invalid value {value!r}", key) from None


def _validate(cfg: dict):
    for key, allowed in CHOICES.items():
        if cfg.get(key) not in allowed:
            raise UsageError(f"must be one of {[a for a in allowed if a is not None]}", key)
    for key in POSITIVE_INT + POSITIVE_FLOAT:
        if not cfg[key] > 0:
            raise UsageError("must be positive", key)
    for key in NONNEG_INT + NONNEG_FLOAT:
        if cfg[key] < 0:
            raise UsageError("must be non-negative", key)
    if not 0 < cfg["known_fraction"] <= 1:
        raise UsageError("must lie in (0, 1]", "known_fraction")
    if not 0 < cfg["split_ratio"] < 1:
        raise UsageError("must lie in (0, 1)", "split_ratio")
    if cfg["n"] < 2:
        raise UsageError("must be at least 2", "n")
    if cfg["bandwidth"] != "median":
        try:
            if float(cfg["bandwidth"]) <= 0:
                raise ValueError
        except ValueError:
            raise UsageError("must be 'median' or a positive number", "bandwidth") from None
    if any(r < 0 or r > 1 for r in cfg["retentions"]):
        raise UsageError("retentions must lie in [0, 1]", "retentions")
    if any(v < 0 for v in cfg["gammas"] + cfg["etas"]):
        raise UsageError("grid values must be non-negative", "gammas")


def resolve(values: dict) -> RunConfig:
    unknown = sorted(set(values) - set(FIELDS))
    if unknown:
        raise UsageError("unknown configuration key", unknown[0])
    if values.get("seed") is None:
        raise UsageError("a seed is required", "seed")
    if values.get("out") is None:
        raise UsageError("an output directory is required", "out")
    if values.get("subcommand") is None:
        raise UsageError("a subcommand is required", "subcommand")
    cfg = {k: f.default for k, f in FIELDS.items() if k not in ("subcommand", "seed", "out")}
    cfg.update({k: _coerce(k, v) for k, v in values.items()})
    _validate(cfg)
    return RunConfig(**cfg)


def read_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}", "config") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad JSON: {exc}", "config") from None
        if not isinstance(data, dict):
            raise UsageError("JSON config must be an object", "config")
        # a provenance.json from an earlier run re-runs that command
        if isinstance(data.get("config"), dict) and "config_hash" in data:
            data = data["config"]
        return data
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno} is not key=value", "config")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        key = None
        if message.startswith("unrecognized arguments:"):
            key = message.split(":", 1)[1].split()[0].lstrip("-").replace("-", "_")
        raise UsageError(message, key)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="structleak", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="JSON or key=value file; flags override its values")
    parser.add_argument("-v", "--verbose", action="store_true")
    for name in FIELDS:
        if name != "subcommand":
            parser.add_argument("--" + name.replace("_", "-"), dest=name, default=None)
    return parser


def parse_config(argv) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    values = read_config_file(args.pop("config")) if args.get("config") else {}
    args.pop("verbose", None)
    values.update({k: v for k, v in args.items() if v is not None})
    return resolve(values)


# ---------------------------------------------------------------- commands

def _dump(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_data(cfg: RunConfig):
    if cfg.data is None:
        raise UsageError("this command needs --data DIR", "data")
    d = Path(cfg.data)
    feats = d / "features.csv"
    graph, labels = load_graph(d / "edges.txt", feats if feats.exists() else None, d / "labels.csv")
    utility = None
    if (d / "utility.csv").exists():
        _, utility = load_graph(d / "edges.txt", None, d / "utility.csv", num_nodes=graph.n)
    return graph, labels, utility


def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    data = generate(scenario(cfg.scenario, cfg.n, cfg.seed, known_fraction=cfg.known_fraction))
    write_edge_list(out / "edges.txt", data.graph)
    write_features(out / "features.csv", data.graph)
    write_labels(out / "labels.csv", data.private)
    write_labels(out / "utility.csv", data.utility)
    return {"synth_config": data.config.to_dict(), "nodes": data.graph.n, "edges": data.graph.m}


def cmd_audit(cfg: RunConfig, out: Path) -> dict:
    graph, labels, _ = _load_data(cfg)
    pseudo = None
    if cfg.label_mode == "pseudo-augmented":
        pseudo = P.initial_pseudo_labels(graph, labels)
    report = audit(graph, labels, HomophilyConfig(cfg.theta, cfg.label_mode), pseudo)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    return {"summary": report.summary}


def cmd_attack(cfg: RunConfig, out: Path) -> dict:
    graph, labels, _ = _load_data(cfg)
    if cfg.baseline is not None:
        pred = A.baseline_attack(cfg.baseline, graph, labels, cfg.attack_config())
    else:
        model, history = A.train_attack(graph, labels, cfg.attack_config())
        model.save(out / "model")
        pred = A.infer(model, graph, labels)
    (out / "predictions.csv").write_text(pred.to_csv())
    metrics = E.attack_metrics(pred.dist, labels)
    _dump(out / "metrics.json", asdict(metrics))
    return {"metrics": asdict(metrics)}


def _train_and_publish(cfg: RunConfig, graph, labels, **sampler_over):
    scfg = cfg.sampler_config(**sampler_over)
    sampler, _, history = P.train_sampler(graph, labels, cfg.attack_config(), scfg)
    probs = P.edge_probabilities(graph, sampler)
    final = history.losses[-1].to_dict() if history.losses else None
    prov = {"sampler_config": asdict(scfg), "epochs": scfg.epochs, "final_losses": final}
    return sampler, P.publish(graph, probs, cfg.publish_mode, cfg.seed, prov)


def cmd_publish(cfg: RunConfig, out: Path) -> dict:
    graph, labels, _ = _load_data(cfg)
    sampler, pub = _train_and_publish(cfg, graph, labels)
    sampler.save(out / "sampler")
    write_edge_list(out / "edges.txt", pub.graph)
    (out / "probs.csv").write_text(pub.keep_probabilities.to_csv(graph))
    return {**pub.provenance, "retention": pub.retention}


def _read_probs(path, graph):
    rows = Path(path).read_text().splitlines()[1:]
    t = np.array([float(r.split(",")[2]) for r in rows if r.strip()])
    if t.shape != (graph.m,):
        raise UsageError(f"{len(t)} probabilities for {graph.m} edges", "published")
    return t


def _bandwidth(cfg: RunConfig):
    return "median" if cfg.bandwidth == "median" else float(cfg.bandwidth)


def cmd_eval(cfg: RunConfig, out: Path) -> dict:
    graph, labels, utility = _load_data(cfg)
    if cfg.published is None:
        raise UsageError("eval needs --published DIR", "published")
    pub_dir = Path(cfg.published)
    published, _ = load_graph(pub_dir / "edges.txt", num_nodes=graph.n)
    published = published.with_features(graph.features)
    if not set(map(tuple, published.edges.tolist())) <= set(map(tuple, graph.edges.tolist())):
        raise UsageError("published graph has edges outside the original", "published")
    probs = _read_probs(pub_dir / "probs.csv", graph) if (pub_dir / "probs.csv").exists() else None
    report = E.evaluate(graph, published, labels, utility, probs, cfg.attack_config(), cfg.seed,
                        _bandwidth(cfg), cfg.split_ratio, cfg.to_dict())
    (out / "report.json").write_text(report.to_json())
    return {"retention": report.retention}


def cmd_theorem_check(cfg: RunConfig, out: Path) -> dict:
    graph, _, _ = _load_data(cfg)
    rng = np.random.default_rng(cfg.seed)
    size = cfg.subgraph_size
    cands = [u for u in range(graph.n) if len(bfs_nodes(graph, u, cfg.k)) >= size]
    if not cands:
        raise UsageError(f"no node has a {cfg.k}-hop neighbourhood of {size} nodes", "subgraph_size")
    adj = graph.adjacency().tocsr()
    reports = []
    for p in range(cfg.pairs):
        subs = []
        for u in rng.choice(cands, size=2):
            nodes = bfs_nodes(graph, int(u), cfg.k)[:size]
            subs.append(adj[nodes][:, nodes].toarray())
        for e in range(cfg.encoders):
            w = A.random_filter_encoder(cfg.hidden, cfg.layers, rng)
            r = A.check_theorem_bound(subs[0], subs[1], w)
            reports.append({"pair": p, "encoder": e, **r.to_dict()})
    holds = sum(r["holds"] for r in reports)
    _dump(out / "bounds.json", reports)
    return {"checked": len(reports), "holds": holds}


def cmd_sweep(cfg: RunConfig, out: Path) -> dict:
    graph, labels, utility = _load_data(cfg)
    if utility is None:
        raise UsageError("sweep needs utility.csv in the data directory", "data")
    acfg = cfg.attack_config()

    def score(g):
        _, m, _ = E.worst_case_attack(g, labels, acfg)
        return m.accuracy, E.utility_eval(g, utility, cfg.split_ratio, cfg.seed, acfg)

    rows = ["gamma,eta,retention,attack_acc,utility_acc"]
    for gamma in cfg.gammas:
        for eta in cfg.etas:
            _, pub = _train_and_publish(cfg, graph, labels, gamma=gamma, eta=eta)
            acc, util = score(pub.graph)
            rows.append(f"{gamma!r},{eta!r},{pub.retention:.6f},{acc:.6f},{util:.6f}")
    (out / "tradeoff.csv").write_text("\n".join(rows) + "\n")
    base = ["method,retention,attack_acc,utility_acc"]
    acc, util = score(graph)
    base.append(f"original,1.000000,{acc:.6f},{util:.6f}")
    for kind in E.BASELINE_DEFENSES:
        for r in cfg.retentions:
            keep = E.baseline_mask(kind, graph, r, cfg.seed)
            acc, util = score(apply_edge_mask(graph, keep))
            base.append(f"{kind},{keep.mean():.6f},{acc:.6f},{util:.6f}")
    (out / "baselines.csv").write_text("\n".join(base) + "\n")
    return {"points": len(rows) - 1}


COMMANDS = {"synth": cmd_synth, "audit": cmd_audit, "attack": cmd_attack, "publish": cmd_publish,
            "eval": cmd_eval, "theorem-check": cmd_theorem_check, "sweep": cmd_sweep}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    for key in ("data", "published"):
        src = getattr(cfg, key)
        if src is not None and Path(src).resolve() == out.resolve():
            raise UsageError("output directory must differ from the input directory", "out")
    out.mkdir(parents=True, exist_ok=True)
    summary = COMMANDS[cfg.subcommand](cfg, out)
    _dump(out / "provenance.json", {"config": cfg.to_dict(), "config_hash": P.config_hash(cfg.to_dict()),
                                    "result": summary})
    return 0


def error_record(exc: Exception) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc),
           "exit_code": getattr(exc, "exit_code", 3), "module": getattr(exc, "module", "core")}
    if isinstance(exc, UsageError):
        rec["key"] = exc.key
        rec["module"] = "cli"
    return rec


def tune_allocator():
    """Stop glibc from returning large numpy buffers to the OS after every op.

    Training allocates and frees the same few megabyte-sized arrays each
    step; with the default mmap threshold every one of them page-faults.
    """
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 31)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    tune_allocator()
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(parse_config(argv))
    except StructLeakError as exc:
        rec = error_record(exc)
    except OSError as exc:
        rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": 3, "module": "io"}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return rec["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
