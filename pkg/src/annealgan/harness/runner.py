"""Experiment orchestration: per-seed engines, CSV rows, dumps and manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..cfg_engine import CfgConfig, analytic_flow_kl, ideal_score_flow, train_cfg
from ..distributions import (
    DatasetSpec,
    GaussianComponent,
    GaussianMixture,
    fit_gaussian,
    kl_gaussians,
    make_dataset,
)
from ..errors import AnnealGanError, ConfigError
from ..gan_engine import NatsConfig, run_scheme
from ..metrics import GaussianFit, GridSpec, frechet_gaussian, mode_report, score_diff_field
from ..models import AnalyticDiscriminator, Discriminator, Generator, logistic_disc_update
from ..numerics.gradcheck import grad_check
from ..numerics.nn import NetParams, init_net
from ..numerics.rng import Rng
from ..samplers import ChainConfig, ScoreOracle, annealed_langevin, langevin
from ..schedules import SigmaLadder, alpha_ladder, schedule_from_spec
from .config import Call, RunConfig, emit_config

COLUMNS = (
    "run_id", "seed", "outer_iter", "scheme", "loss", "n_d", "m",
    "frechet", "kl", "modes_covered", "quality_fraction", "score_gap", "wall_clock_ms",
)
THREADS_ENV = "CFG_ANNEAL_THREADS"


# --- builders ---------------------------------------------------------------


def dataset_spec(cfg: RunConfig, seed: int = 0) -> DatasetSpec:
    d: Call = cfg["data.dataset"]
    n = cfg["data.n_samples"]
    if d.name == "ring":
        return DatasetSpec("ring", d.args[0], radius=d.args[1], sigma=d.args[2], n_samples=n, seed=seed)
    if d.name == "grid":
        return DatasetSpec("grid", d.args[0], spacing=d.args[1], sigma=d.args[2], n_samples=n, seed=seed)
    if d.name == "two_gaussian":
        return DatasetSpec("two-gaussian", 1, radius=d.args[0], sigma=d.args[1], n_samples=n, seed=seed)
    sep = d.args[0]
    return DatasetSpec("custom-mixture", 2, sigma=d.args[1], n_samples=n, seed=seed,
                       means=((-sep, 0.0), (sep, 0.0)))


def build_schedule(spec: Call, length: int):
    return schedule_from_spec(spec.name, length, *spec.args)


def build_models(cfg: RunConfig, rng: Rng) -> tuple[Generator, Discriminator]:
    hidden = (cfg["model.hidden"],) * cfg["model.layers"]
    betas = (cfg["optim.beta1"], cfg["optim.beta2"])
    act, kind = cfg["model.activation"], cfg["optim.kind"]
    G = Generator.create(rng.split("init-G"), cfg["model.latent_dim"], 2, hidden, act, cfg["optim.lr_g"], betas, kind)
    D = Discriminator.create(rng.split("init-D"), 2, hidden, act, cfg["optim.lr_d"], betas, kind)
    return G, D


def cfg_config(cfg: RunConfig) -> CfgConfig:
    delta = cfg["cfg.delta"]
    mode, value = ("computed", 1.0) if delta == "computed" else ("constant", delta.args[0])
    return CfgConfig(
        M=cfg["cfg.m"], U=cfg["cfg.u"], N=cfg["cfg.n"], B=cfg["cfg.b"], eta_flow=cfg["cfg.eta_flow"],
        schedule=build_schedule(cfg["cfg.schedule"], cfg["cfg.m"]), delta_mode=mode, delta_value=value,
        s_scale=cfg["cfg.s_scale"], phi0=cfg["cfg.phi0"], delta_cap=cfg["cfg.delta_cap"],
        distill_passes=cfg["cfg.distill_passes"],
    )


def nats_config(cfg: RunConfig) -> NatsConfig:
    scheme = cfg["nats.scheme"]
    n_d = 1 if scheme == "cts" else cfg["nats.n_d"]
    return NatsConfig(
        N=cfg["nats.n"], K=cfg["nats.k"], N_d=n_d, schedule=build_schedule(cfg["nats.schedule"], n_d),
        loss=cfg["nats.loss"], B=cfg["nats.batch"], mode="nts" if scheme == "cts" else scheme,
        clip=cfg["nats.clip"], eval_every=cfg["run.eval_every"], record_trace=False,
    )


def chain_config(cfg: RunConfig) -> ChainConfig:
    ladder = SigmaLadder.geometric(cfg["langevin.sigma_first"], cfg["langevin.gamma"], cfg["langevin.levels"])
    eps = cfg["langevin.epsilon"]
    if eps == "auto":
        eps = 0.1 * ladder.sigmas[-1] ** 2
    prior = GaussianComponent.isotropic(cfg["langevin.prior_mean"], cfg["langevin.prior_sigma"])
    steps = cfg["langevin.steps"]
    annealed = cfg["langevin.annealed"]
    return ChainConfig(
        steps if annealed else steps * len(ladder), eps, prior, cfg["langevin.chains"],
        alpha_ladder(ladder, eps) if annealed else None, cfg["langevin.bound"], cfg["langevin.noise"],
    )


def run_id(cfg: RunConfig) -> str:
    """Content hash of the canonical config without seeds or output path."""
    text = "".join(line for line in emit_config(cfg).splitlines(keepends=True)
                   if not line.startswith(("run.seeds", "run.out")))
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# --- per-seed execution ---------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    rows: list = field(default_factory=list)
    files: dict = field(default_factory=dict)  # relative path -> text
    timing: list = field(default_factory=list)  # wall-clock ms per row
    error: str | None = None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else repr(v))
    return str(v)


class _Rows:
    def __init__(self, cfg: RunConfig, seed: int, rid: str, result: SeedResult):
        self.cfg, self.seed, self.rid, self.result = cfg, seed, rid, result
        self.t0 = time.perf_counter()

    def add(self, outer_iter, scheme, loss="", n_d=None, m=None, frechet=None, kl=None,
            modes=None, quality=None, gap=None):
        ms = (time.perf_counter() - self.t0) * 1e3
        self.result.timing.append(ms)
        wall = round(ms, 3) if self.cfg["run.record_wall_clock"] else None
        self.result.rows.append([self.rid, self.seed, outer_iter, scheme, loss, n_d, m, frechet, kl,
                                 modes, quality, gap, wall])


def _sample_metrics(cfg: RunConfig, samples: np.ndarray, truth: GaussianMixture, reference: GaussianFit):
    fit = GaussianFit.of(samples)
    fr = frechet_gaussian(fit, reference)
    try:
        kl = kl_gaussians(fit_gaussian(samples), GaussianComponent(reference.mean, reference.cov))
    except np.linalg.LinAlgError:
        kl = math.inf
    rep = mode_report(samples, truth, cfg["run.quality_radius"])
    return fr, kl, rep.covered, rep.quality_fraction


def _snapshot(net: NetParams) -> str:
    return json.dumps(net.to_dict(), sort_keys=True) + "\n"


def _reference(truth: GaussianMixture) -> GaussianFit:
    mean, cov = truth.moments()
    return GaussianFit(mean, cov)


def run_seed(cfg: RunConfig, seed: int) -> SeedResult:
    """Execute one seed; engine failures are captured, not raised."""
    result = SeedResult(seed)
    rid = run_id(cfg)
    rows = _Rows(cfg, seed, rid, result)
    rng = Rng(seed, (cfg.kind,))
    try:
        _DISPATCH[cfg.kind](cfg, seed, rng, rows, result)
    except (AnnealGanError, FloatingPointError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _data(cfg, seed, rng):
    spec = dataset_spec(cfg, seed)
    data, truth = make_dataset(spec, rng.split("dataset"))
    return data, truth


def _run_flow(cfg, seed, rng, rows, result):
    data, truth = _data(cfg, seed, rng)
    start = GaussianComponent.isotropic(cfg["flow.start_mean"], cfg["flow.start_sigma"])
    if cfg["flow.mode"] == "ideal":
        curve = ideal_score_flow(start, truth, cfg["flow.steps"], cfg["flow.eta_flow"],
                                 cfg["flow.particles"], rng.split("flow"))
        for step, kl in enumerate(curve):
            rows.add(step, "ideal-flow", m=step, kl=float(kl))
        return
    if len(truth) != 1:
        raise ConfigError("analytic-critic flow needs a single-Gaussian dataset", key="data.dataset")
    sched = build_schedule(cfg["flow.schedule"], cfg["flow.steps"])
    kl = analytic_flow_kl(truth.components[0], start, sched, rng.split("flow"), cfg["flow.eta_flow"],
                          cfg["flow.particles"], cfg["flow.batch"])
    rows.add(cfg["flow.steps"], f"analytic-flow-{sched.kind}", m=cfg["flow.steps"], kl=kl)


def _eval_generator(cfg, G, truth, reference, rng, tag):
    x = G(G.sample_latent(cfg["run.eval_samples"], rng.split("eval", tag)))
    return _sample_metrics(cfg, x, truth, reference)


def _run_train_cfg(cfg, seed, rng, rows, result):
    data, truth = _data(cfg, seed, rng)
    reference = _reference(truth)
    G, D = build_models(cfg, rng)
    if cfg["cfg.critic"] == "analytic":
        D = AnalyticDiscriminator(truth, fit_gaussian(G(G.sample_latent(cfg["cfg.n"], rng.split("warm")))))
    ccfg = cfg_config(cfg)
    epochs, every = cfg["cfg.epochs"], cfg["run.eval_every"]

    def on_epoch(e, trace, G, D):
        if e % every == 0 or e == epochs:
            fr, kl, modes, q = _eval_generator(cfg, G, truth, reference, rng, e)
            rows.add(e, "cfg", "logistic", None, ccfg.M, fr, kl, modes, q)

    _, G, D = train_cfg(G, D, data, ccfg, epochs, rng.split("train"), on_epoch)
    result.files["generator.json"] = _snapshot(G.net)
    if isinstance(D, Discriminator):
        result.files["discriminator.json"] = _snapshot(D.net)


def _run_train_gan(cfg, seed, rng, rows, result):
    data, truth = _data(cfg, seed, rng)
    reference = _reference(truth)
    G, D = build_models(cfg, rng)
    ncfg = nats_config(cfg)
    scheme = cfg["nats.scheme"]

    def on_eval(i, G, D):
        fr, kl, modes, q = _eval_generator(cfg, G, truth, reference, rng, i)
        rows.add(i, scheme, ncfg.loss.kind, ncfg.N_d, None, fr, kl, modes, q)

    run_scheme(scheme, G, D, data, ncfg, rng.split("train"), on_eval)
    result.files["generator.json"] = _snapshot(G.net)
    result.files["discriminator.json"] = _snapshot(D.net)


def _run_langevin(cfg, seed, rng, rows, result):
    _, truth = _data(cfg, seed, rng)
    ccfg = chain_config(cfg)
    oracle = ScoreOracle.analytic(truth)
    sampler = annealed_langevin if ccfg.ladder is not None else langevin
    res = sampler(oracle, ccfg, rng.split("chains"))
    fr, kl, modes, q = _sample_metrics(cfg, res.samples, truth, _reference(truth))
    scheme = "annealed-langevin" if ccfg.ladder is not None else "langevin"
    rows.add(len(res.step_sizes), scheme, frechet=fr, kl=kl, modes=modes, quality=q)
    lines = ["x y"] + [f"{_fmt(float(a))} {_fmt(float(b))}" for a, b in res.samples]
    result.files["samples.txt"] = "\n".join(lines) + "\n"


def _run_eval(cfg, seed, rng, rows, result):
    _, truth = _data(cfg, seed, rng)
    path = Path(cfg["eval.snapshot"])
    net = NetParams.from_dict(json.loads(path.read_text()))
    G = Generator(net, None)
    fr, kl, modes, q = _eval_generator(cfg, G, truth, _reference(truth), rng, 0)
    rows.add(0, "eval", frechet=fr, kl=kl, modes=modes, quality=q)


def _run_dump_field(cfg, seed, rng, rows, result):
    _, truth = _data(cfg, seed, rng)
    ref = GaussianComponent.isotropic(cfg["field.reference_mean"], cfg["field.reference_sigma"])
    grid = GridSpec(cfg["field.nx"], cfg["field.ny"], cfg["field.xmin"], cfg["field.xmax"],
                    cfg["field.ymin"], cfg["field.ymax"])
    if cfg["field.critic"] == "analytic":
        D = AnalyticDiscriminator(truth, ref)
    else:
        _, D = build_models(cfg, rng)
        train_critic(D, truth, GaussianMixture([ref]), cfg["field.steps"], cfg["field.batch"], rng.split("critic"))
        result.files["discriminator.json"] = _snapshot(D.net)
    dump = score_diff_field(D, truth, ref, grid)
    rows.add(cfg["field.steps"], f"field-{cfg['field.critic']}", "logistic", gap=dump.mean_gap)
    result.files["field.txt"] = dump.to_text()


def _run_grad_check(cfg, seed, rng, rows, result):
    widths = cfg["gradcheck.widths"]
    worst, failures = 0.0, 0
    lines = []
    for k in range(cfg["gradcheck.nets"]):
        r = rng.split("net", k)
        net = init_net(widths, r, cfg["gradcheck.activation"])
        x = r.normal((cfg["gradcheck.batch"], widths[0]))
        rep = grad_check(net, x, cfg["gradcheck.tolerance"])
        worst = max(worst, rep.max_rel_error)
        failures += len(rep.failures)
        lines.append(f"{k} {_fmt(rep.max_rel_error)} {len(rep.failures)}")
    result.files["gradcheck.txt"] = "net max_rel_error failures\n" + "\n".join(lines) + "\n"
    rows.add(cfg["gradcheck.nets"], "grad-check", gap=worst)
    if failures:
        raise FloatingPointError(f"{failures} gradient entries exceeded tolerance; worst {worst:.3e}")


_DISPATCH = {
    "flow": _run_flow,
    "train-cfg": _run_train_cfg,
    "train-gan": _run_train_gan,
    "sample-langevin": _run_langevin,
    "eval": _run_eval,
    "dump-field": _run_dump_field,
    "grad-check": _run_grad_check,
}


def train_critic(D: Discriminator, p_star, p_g, steps: int, batch: int, rng: Rng) -> list[float]:
    """Logistic critic training on fresh draws from two known laws."""
    losses = []
    for t in range(steps):
        s = rng.split("step", t)
        losses.append(logistic_disc_update(D, p_star.sample(batch, s.split("real")),
                                           p_g.sample(batch, s.split("fake"))))
    return losses


# --- orchestration --------------------------------------------------------------


@dataclass
class RunOutcome:
    status: int
    run_id: str
    out_dir: Path
    errors: dict


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def run_experiment(cfg: RunConfig, out: str | os.PathLike | None = None, log=None) -> RunOutcome:
    """Run every seed, then write CSV, per-seed files and the manifest (last).

    Output layout under ``<out>/<run_id>/``: ``metrics.csv``,
    ``seed-<s>/...`` artifacts, ``config.txt`` and ``manifest.json``.
    Exit status is 0 when every seed finished and 2 when any aborted.
    """
    rid = run_id(cfg)
    root = Path(out if out is not None else cfg["run.out"]) / rid
    root.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.seeds)
    workers = min(_threads(), len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_seed, [cfg] * len(seeds), seeds))
    else:
        results = []
        for s in seeds:
            results.append(run_seed(cfg, s))
            if log:
                log(f"seed {s}: {'ok' if results[-1].error is None else results[-1].error}")

    written: dict[str, bytes] = {}

    def put(rel: str, text: str):
        data = text.encode("utf-8")
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        (root / rel).write_bytes(data)
        written[rel] = data

    config_text = emit_config(cfg)
    put("config.txt", config_text)
    put("metrics.csv", _csv_text([row for r in results for row in r.rows]))
    for r in results:
        for name, text in sorted(r.files.items()):
            put(f"seed-{r.seed}/{name}", text)
    if cfg["run.record_wall_clock"]:
        # timings vary run to run, so they stay outside the hashed manifest
        timing = "seed,row,wall_clock_ms\n" + "".join(
            f"{r.seed},{i},{ms:.3f}\n" for r in results for i, ms in enumerate(r.timing))
        (root / "timing.csv").write_text(timing)
    errors = {r.seed: r.error for r in results if r.error is not None}
    manifest = {
        "run_id": rid,
        "kind": cfg.kind,
        "seeds": seeds,
        "status": "aborted" if errors else "ok",
        "errors": {str(k): v for k, v in errors.items()},
        "config": config_text.splitlines(),
        "files": {rel: git_blob_hash(data) for rel, data in sorted(written.items())},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunOutcome(2 if errors else 0, rid, root, errors)


# --- comparison -----------------------------------------------------------------

_HIGHER_IS_BETTER = {"modes_covered", "quality_fraction"}


@dataclass(frozen=True)
class RankRow:
    group: tuple  # (scheme, loss, n_d)
    value: float
    seeds: int


def _load_run(path: Path) -> tuple[dict, list[dict]]:
    path = Path(path)
    if path.is_file():
        path = path.parent
    manifest = json.loads((path / "manifest.json").read_text())
    with open(path / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return manifest, rows


def _config_value(manifest: dict, key: str) -> str | None:
    for line in manifest["config"]:
        k, _, v = line.partition(" = ")
        if k == key:
            return v
    return None


def compare_runs(paths, metric: str = "frechet", aggregation: str = "median") -> list[RankRow]:
    """Rank groups by the metric at each seed's final evaluation.

    Groups are (scheme, loss, n_d); ``aggregation`` is ``median`` or ``min``
    across seeds (``max`` for metrics where higher is better).
    """
    if metric not in COLUMNS[7:12]:
        raise ValueError(f"metric must be one of {COLUMNS[7:12]}")
    if aggregation not in ("median", "min"):
        raise ValueError("aggregation must be median or min")
    runs = [_load_run(Path(p)) for p in paths]
    if not runs:
        raise ValueError("no runs given")
    for key in ("data.dataset", "run.eval_every"):
        vals = {_config_value(m, key) for m, _ in runs}
        if len(vals) > 1:
            raise ConfigError(f"runs are incompatible: {key} differs ({', '.join(sorted(map(str, vals)))})")
    finals: dict[tuple, dict[str, float]] = {}
    for _, rows in runs:
        last: dict[tuple, tuple[int, float]] = {}
        for row in rows:
            if row[metric] == "":
                continue
            group = (row["scheme"], row["loss"], row["n_d"])
            key = group + (row["run_id"], row["seed"])
            it = int(row["outer_iter"])
            if key not in last or it >= last[key][0]:
                last[key] = (it, float(row[metric]))
        for key, (_, v) in last.items():
            finals.setdefault(key[:3], {})[f"{key[3]}/{key[4]}"] = v
    higher = metric in _HIGHER_IS_BETTER
    table = []
    for group, per_seed in finals.items():
        vals = np.array(list(per_seed.values()))
        if aggregation == "median":
            v = float(np.median(vals))
        else:
            v = float(vals.max() if higher else vals.min())
        table.append(RankRow(group, v, len(vals)))
    table.sort(key=lambda r: (-r.value if higher else r.value, r.group))
    return table


def format_ranking(table: list[RankRow], metric: str) -> str:
    lines = [f"rank,scheme,loss,n_d,{metric},seeds"]
    for i, r in enumerate(table, 1):
        lines.append(f"{i},{r.group[0]},{r.group[1]},{r.group[2]},{_fmt(r.value)},{r.seeds}")
    return "\n".join(lines) + "\n"
