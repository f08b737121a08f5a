"""Stage orchestration: every stage reads the previous stage's files from the
work directory and writes its own files plus a ``manifest.json``.

A stage whose manifest matches the current stage hash (and whose files still
hash to the recorded digests) is skipped.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

from .agent import LearningRates, export_memories, load_agents, optimize_agents, save_agents
from .artifacts import ArtifactError, read_container, sha256_file
from .catalog import Dataset, SplitConfig, ingest, split_views, write_dataset
from .config import STAGES, RunConfig, config_hash, dump_config, stage_hashes
from .ensemble import load_ensemble, save_ensemble, train_ensemble
from .evaluation import evaluate_run, make_run, read_run, write_report, write_run
from .llm import Gateway, HttpChatBackend, MockOracle, ReplayCache, heuristic_responder
from .rectools import load_imported_scores, load_tool, save_tool, top_k, train_tool
from .rerank import aggregate, final_ranking, tool_scores
from .synthetic import block_dataset, segment_dataset

logger = logging.getLogger(__name__)

STAGE_DIRS = {"ingest": "ingest", "train-tools": "tools", "optimize-agents": "agents",
              "infer": "infer", "evaluate": "evaluate"}


class StageError(RuntimeError):
    exit_code = 1


class MissingArtifact(StageError):
    exit_code = 2


def split_of(cfg: RunConfig) -> SplitConfig:
    s = cfg.split
    return SplitConfig(k=s.k, c=s.c, k_prime=s.k_prime, k_cpr=s.k_cpr)


def build_gateway(cfg: RunConfig, replay_only: bool = False) -> Gateway:
    llm = cfg.llm
    cache = ReplayCache(llm.cache) if llm.cache else None
    common = dict(domain=llm.domain, max_concurrency=llm.max_concurrency,
                  temperature=llm.temperature, max_tokens=llm.max_tokens)
    if llm.backend == "replay" or (replay_only and llm.backend != "mock"):
        if cache is None:
            raise StageError("replay mode needs llm.cache (or --llm-cache)")
        return Gateway(None, cache, replay_only=True, model=llm.model, **common)
    if llm.backend == "mock":
        backend = MockOracle(responder=heuristic_responder)
        return Gateway(backend, cache, replay_only=replay_only and cache is not None, model="mock", **common)
    if not llm.endpoint:
        raise StageError("the http backend needs llm.endpoint (or --llm-endpoint)")
    backend = HttpChatBackend(llm.endpoint, llm.model, token_env=llm.token_env, retries=llm.retries,
                              timeout=llm.timeout)
    return Gateway(backend, cache, model=llm.model, **common)


class Pipeline:
    def __init__(self, cfg: RunConfig, replay_only: bool = False, force: bool = False,
                 echo: Callable[[str], None] = print):
        self.cfg = cfg
        self.workdir = Path(cfg.workdir)
        self.replay_only = replay_only
        self.force = force
        self.echo = echo
        self.hashes = stage_hashes(cfg)
        self.config_hash = config_hash(cfg)
        self._gateway = None

    # -- bookkeeping -------------------------------------------------------

    def stage_dir(self, stage: str) -> Path:
        return self.workdir / STAGE_DIRS[stage]

    def manifest(self, stage: str) -> dict | None:
        path = self.stage_dir(stage) / "manifest.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _meta(self, stage: str) -> dict:
        return {"config_hash": self.config_hash, "stage_hash": self.hashes[stage], "seed": self.cfg.seed}

    def _write_manifest(self, stage: str, files: list[str]) -> None:
        d = self.stage_dir(stage)
        doc = dict(self._meta(stage), stage=stage, upstream=self._upstream_digest(stage),
                   files={name: sha256_file(d / name) for name in sorted(files)})
        (d / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def _upstream_digest(self, stage: str) -> str | None:
        idx = STAGES.index(stage)
        if idx == 0:
            return None
        path = self.stage_dir(STAGES[idx - 1]) / "manifest.json"
        return sha256_file(path) if path.exists() else None

    def _intact(self, stage: str, manifest: dict) -> bool:
        d = self.stage_dir(stage)
        return all((d / n).exists() and sha256_file(d / n) == h for n, h in manifest["files"].items())

    def up_to_date(self, stage: str) -> bool:
        m = self.manifest(stage)
        return (m is not None and m["stage_hash"] == self.hashes[stage]
                and m.get("upstream") == self._upstream_digest(stage) and self._intact(stage, m))

    def require(self, stage: str) -> None:
        m = self.manifest(stage)
        if m is None:
            raise MissingArtifact(f"no {stage} output in {self.workdir}: run {stage} first")
        if m["stage_hash"] != self.hashes[stage]:
            raise MissingArtifact(f"{stage} output in {self.workdir} was made with a different config: "
                                  f"run {stage} first")

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            self._gateway = build_gateway(self.cfg, self.replay_only)
        return self._gateway

    # -- loaders -----------------------------------------------------------

    def dataset(self) -> Dataset:
        d = self.stage_dir("ingest")
        return ingest(d / "interactions.csv", d / "items.csv", split_of(self.cfg))

    def tools(self):
        m = self.manifest("train-tools")
        d = self.stage_dir("train-tools")
        return [load_tool(d / name) for name in sorted(n for n in m["files"] if n.endswith(".tool"))]

    # -- stages ------------------------------------------------------------

    def run(self, stages=STAGES) -> None:
        for stage in stages:
            if stage not in STAGES:
                raise StageError(f"unknown stage {stage!r}")
            if not self.force and self.up_to_date(stage):
                self.echo(f"{stage}: up to date (stage hash {self.hashes[stage][:12]}), skipping")
                continue
            upstream = STAGES[:STAGES.index(stage)]
            if upstream:
                self.require(upstream[-1])
            self.stage_dir(stage).mkdir(parents=True, exist_ok=True)
            files = getattr(self, "_" + stage.replace("-", "_"))()
            self._write_manifest(stage, files)
            self.echo(f"{stage}: wrote {len(files)} file(s) to {self.stage_dir(stage)}")
        (self.workdir / "config.yaml").write_text(dump_config(self.cfg), encoding="utf-8")

    def _ingest(self) -> list[str]:
        cfg, d = self.cfg, self.stage_dir("ingest")
        if cfg.data.synthetic == "segment":
            data, _ = segment_dataset(cfg.data.synthetic_users, seed=cfg.seed)
        elif cfg.data.synthetic == "block":
            data, _ = block_dataset(cfg.data.synthetic_users, seed=cfg.seed)
        else:
            data = ingest(cfg.data.interactions, cfg.data.items, split_of(cfg), delimiter=cfg.data.delimiter,
                          min_interactions=cfg.data.min_interactions)
        if not data.sequences:
            raise StageError("ingest kept no users; check the split lengths against the data")
        write_dataset(data.catalog, data.sequences, d / "interactions.csv", d / "items.csv")
        self.echo(f"ingest: {len(data.sequences)} users, {len(data.catalog)} items, "
                  f"{data.duplicates_dropped} duplicate interactions dropped")
        return ["interactions.csv", "items.csv"]

    def _train_tools(self) -> list[str]:
        cfg, d = self.cfg, self.stage_dir("train-tools")
        data = self.dataset()
        files = []
        for idx, (spec, label) in enumerate(zip(cfg.tools, cfg.tool_labels())):
            if spec.variant == "imported":
                model = load_imported_scores(spec.path, data.catalog, data.sequences, label=label)
            else:
                model = train_tool(spec.variant, data.sequences, split_of(cfg), len(data.catalog),
                                   seed=cfg.seed, label=label, **spec.params)
            name = f"{idx:02d}_{label}.tool"
            save_tool(model, d / name, self._meta("train-tools"))
            files.append(name)
        return files

    def _optimize_agents(self) -> list[str]:
        cfg, d = self.cfg, self.stage_dir("optimize-agents")
        data = self.dataset()
        a, ab = cfg.agent, cfg.ablation
        agents = optimize_agents(
            self.gateway, self.tools(), data.sequences, data.catalog, split_of(cfg),
            LearningRates(a.alpha, a.beta, a.gamma, a.decay), epochs=a.epochs,
            sample_size=min(a.sample_size, len(data.sequences)) if a.sample_size else None,
            seed=cfg.seed, workers=cfg.workers, tool_compare=ab.tool_compare,
            rank_compare=ab.rank_compare, regular_intent=ab.regular_intent)
        if not agents:
            raise StageError("every agent failed to optimize")
        save_agents(agents, d / "agents.json", cfg.tool_labels(), self._meta("optimize-agents"))
        export_memories(agents, cfg.tool_labels(), d / "memories.csv")
        return ["agents.json", "memories.csv"]

    def _infer(self) -> list[str]:
        cfg, d = self.cfg, self.stage_dir("infer")
        split = split_of(cfg)
        data = self.dataset()
        tools = self.tools()
        agents, labels, _ = load_agents(self.stage_dir("optimize-agents") / "agents.json")
        by_user = {s.user: s for s in data.sequences}
        files = []

        ensemble = None
        e = cfg.ensemble
        if e.variant != "rc":
            vectors, targets = [], []
            for seq in data.sequences:
                train, _, target = split_views(seq, split)
                vectors.append(tool_scores(tools, seq.user, train))
                targets.append(target)
            ensemble = train_ensemble(e.variant, vectors, targets, epochs=e.epochs, lr=e.lr, margin=e.margin,
                                      n_neg=e.n_neg, seed=cfg.seed, hidden=e.hidden)
            save_ensemble(ensemble, d / "ensemble.ckpt", self._meta("infer"))
            ensemble = load_ensemble(d / "ensemble.ckpt")
            files.append("ensemble.ckpt")

        ab = cfg.ablation

        def rank(user):
            train = split_views(by_user[user], split).train
            return user, final_ranking(agents[user], self.gateway, tools, train, data.catalog, split,
                                       ab.sc_mode, ab.general_rerank, ensemble)

        users = sorted(u for u in agents if u in by_user)
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                rankings = dict(pool.map(rank, users))
        else:
            rankings = dict(rank(u) for u in users)
        keys = {u: by_user[u].user_key for u in users}
        meta = dict(self._meta("infer"), sc_mode=ab.sc_mode, general_rerank=ab.general_rerank,
                    tool_compare=ab.tool_compare, ensemble=e.variant, tools=labels)
        write_run(make_run(rankings, keys, dict(meta, name="agent")), d / "agent.run", data.catalog,
                  d / "agent.csv")
        files += ["agent.run", "agent.csv"]

        if cfg.eval.baselines:
            baselines = {"aggregate": {}}
            baselines.update({f"tool_{lab}": {} for lab in labels})
            for u in users:
                vectors = tool_scores(tools, u, split_views(by_user[u], split).train)
                agg = aggregate(agents[u].rec_memory, vectors)
                for name, v in [("aggregate", agg)] + [(f"tool_{lab}", v) for lab, v in zip(labels, vectors)]:
                    items = top_k(v, split.k_prime)
                    baselines[name][u] = (items, [float(v.scores[i]) for i in items])
            for name, rk in baselines.items():
                write_run(make_run(rk, keys, dict(meta, name=name)), d / f"{name}.run", data.catalog)
                files.append(f"{name}.run")
        return files

    def _evaluate(self) -> list[str]:
        cfg, d = self.cfg, self.stage_dir("evaluate")
        split = split_of(cfg)
        data = self.dataset()
        infer_dir = self.stage_dir("infer")
        gateway = self.gateway if cfg.eval.vdcg else None
        run = read_run(infer_dir / "agent.run")
        report = evaluate_run(run, data.sequences, split, cfg.eval.cutoffs, gateway, data.catalog,
                              cfg.eval.vdcg_cutoffs, cap=cfg.eval.vdcg_cap)
        write_report(report, d / "report.csv", d / "per_user.csv")
        files = ["report.csv", "per_user.csv"]
        if report.vdcg_skipped:
            self.echo(f"evaluate: VDCG skipped for {report.vdcg_skipped} user(s) after gateway errors")

        others = sorted(p.name for p in infer_dir.glob("*.run") if p.name != "agent.run")
        if others:
            rows = [("agent", m, k, v) for m, per in report.metrics.items() for k, v in per.items()
                    if m != "vdcg"]
            for name in others:
                rep = evaluate_run(read_run(infer_dir / name), data.sequences, split, cfg.eval.cutoffs)
                rows += [(name[:-4], m, k, v) for m, per in rep.metrics.items() for k, v in per.items()]
            with open(d / "comparison.csv", "w", encoding="utf-8") as fh:
                fh.write("run,metric,cutoff,value\n")
                for r in sorted(rows):
                    fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]!r}\n")
            files.append("comparison.csv")
        for m in sorted(report.metrics):
            self.echo("  " + "  ".join(f"{m}@{k}={v:.4f}" for k, v in sorted(report.metrics[m].items())))
        return files

    # -- other commands ----------------------------------------------------

    def export_memories(self, out: str | Path | None = None) -> Path:
        self.require("optimize-agents")
        agents, labels, _ = load_agents(self.stage_dir("optimize-agents") / "agents.json")
        out = Path(out) if out else self.stage_dir("optimize-agents") / "memories.csv"
        export_memories(agents, labels, out)
        return out

    def verify(self) -> list[str]:
        """Re-hash every recorded file; returns problems (empty when all is well)."""
        problems, seen = [], 0
        for stage in STAGES:
            m = self.manifest(stage)
            if m is None:
                continue
            seen += 1
            d = self.stage_dir(stage)
            if m["stage_hash"] != self.hashes[stage]:
                problems.append(f"{stage}: made with a different config (stage hash {m['stage_hash'][:12]})")
            if m.get("upstream") != self._upstream_digest(stage):
                problems.append(f"{stage}: built from an older {STAGES[STAGES.index(stage) - 1]} output")
            for name, digest in m["files"].items():
                path = d / name
                if not path.exists():
                    problems.append(f"{stage}: {name} is missing")
                    continue
                if sha256_file(path) != digest:
                    problems.append(f"{stage}: {name} does not match its recorded sha256")
                    continue
                embedded = _embedded_meta(path)
                if embedded is not None and embedded.get("stage_hash") not in (None, m["stage_hash"]):
                    problems.append(f"{stage}: {name} embeds stage hash {embedded['stage_hash'][:12]}")
        if not seen:
            raise MissingArtifact(f"nothing to verify in {self.workdir}: run ingest first")
        return problems


def _embedded_meta(path: Path) -> dict | None:
    if path.suffix in (".run", ".tool", ".ckpt"):
        try:
            meta, _ = read_container(path)
        except ArtifactError:
            return {"stage_hash": "unreadable"}
        return meta
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8")).get("meta")
    return None

