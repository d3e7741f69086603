"""Error-rate scoring, enhancement metrics, and the comparison-suite report."""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError

SI_SNR_CAP_DB = 60.0


@dataclass
class WerResult:
    substitutions: int
    deletions: int
    insertions: int
    ref_tokens: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self):
        return self.errors / self.ref_tokens

    def to_dict(self):
        return {"substitutions": self.substitutions, "deletions": self.deletions,
                "insertions": self.insertions, "ref_tokens": self.ref_tokens, "wer": self.wer}

    def __add__(self, other):
        return WerResult(self.substitutions + other.substitutions, self.deletions + other.deletions,
                         self.insertions + other.insertions, self.ref_tokens + other.ref_tokens)


def _seq(x):
    if isinstance(x, str):
        return x.split() if " " in x.strip() else list(x)
    return list(getattr(x, "tokens", x))


def wer(ref, hyp):
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    Strings containing spaces are split on whitespace, other strings per
    character. Among minimal alignments the one with the most substitutions
    wins, then the most insertions, so counts are deterministic.
    """
    r, h = _seq(ref), _seq(hyp)
    if not r:
        raise InvalidInputError("reference must be non-empty")
    n, m = len(r), len(h)
    # cell = (cost, -subs, -ins, subs, ins, dels); tuple order implements the tie rule
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    subs = np.zeros_like(cost)
    ins = np.zeros_like(cost)
    cost[0, :] = np.arange(m + 1)
    ins[0, :] = np.arange(m + 1)
    cost[:, 0] = np.arange(n + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            miss = r[i - 1] != h[j - 1]
            cands = (
                (cost[i - 1, j - 1] + miss, -(subs[i - 1, j - 1] + miss), -ins[i - 1, j - 1], 0),
                (cost[i, j - 1] + 1, -subs[i, j - 1], -(ins[i, j - 1] + 1), 1),
                (cost[i - 1, j] + 1, -subs[i - 1, j], -ins[i - 1, j], 2),
            )
            c, ns, ni, _ = min(cands)
            cost[i, j], subs[i, j], ins[i, j] = c, -ns, -ni
    c, s, k = int(cost[n, m]), int(subs[n, m]), int(ins[n, m])
    return WerResult(s, c - s - k, k, n)


def edit_distance(a, b):
    return wer(a, b).errors if len(_seq(a)) else len(_seq(b))


def corpus_wer(refs, hyps):
    if len(refs) != len(hyps):
        raise InvalidInputError("reference and hypothesis counts differ")
    total = WerResult(0, 0, 0, 0)
    for r, h in zip(refs, hyps):
        total = total + wer(list(r), list(h or ""))
    return total


def corpus_cer(refs, hyps):
    """Character error rate over a list of transcripts (pooled counts)."""
    return corpus_wer(refs, hyps).wer


# --- enhancement metrics -------------------------------------------------------------

@dataclass
class SeMetrics:
    spectral_mse: float
    si_snr_db: float

    def __post_init__(self):
        if not (np.isfinite(self.spectral_mse) and np.isfinite(self.si_snr_db)):
            raise InvalidInputError("SE metrics must be finite")


def si_snr(est, ref):
    """Scale-invariant SNR in dB, capped at 60 dB."""
    e = np.asarray(getattr(est, "samples", est), dtype=np.float64)
    s = np.asarray(getattr(ref, "samples", ref), dtype=np.float64)
    if e.shape != s.shape:
        raise InvalidInputError(f"length mismatch {e.shape} vs {s.shape}")
    ref_energy = np.dot(s, s)
    if ref_energy <= 0.0:
        raise InvalidInputError("silent reference")
    target = (np.dot(e, s) / ref_energy) * s
    resid = e - target
    t_energy, r_energy = np.dot(target, target), np.dot(resid, resid)
    if r_energy <= t_energy * 10.0 ** (-SI_SNR_CAP_DB / 10.0):
        return SI_SNR_CAP_DB
    if t_energy == 0.0:
        return -np.inf
    return float(10.0 * np.log10(t_energy / r_energy))


def se_metrics(enhanced_mag, clean_mag, enhanced_wave, clean_wave):
    mse = float(np.mean((np.asarray(enhanced_mag) - np.asarray(clean_mag)) ** 2))
    return SeMetrics(mse, si_snr(enhanced_wave, clean_wave))


# --- comparison suite ----------------------------------------------------------------

NOTE = ("Synthetic-corpus character error rates (CER %). Not comparable to word error "
        "rates measured on real radio speech.")


@dataclass
class SystemSpec:
    """One row of the comparison: a name plus overrides of the base training config."""

    key: str
    label: str
    table: str
    overrides: dict = field(default_factory=dict)


def table2_systems():
    """Seven-system matrix: baseline, augmentation, disjoint, and the joint variants."""
    return [
        SystemSpec("S1", "Baseline with global MVN", "systems", {"train.mode": "baseline"}),
        SystemSpec("S2", "S1 + speed perturbation (x3)", "systems",
                   {"train.mode": "baseline", "train.speed_perturb": True}),
        SystemSpec("S3", "Disjoint training (SE, then ASR)", "systems",
                   {"train.mode": "disjoint", "se.mask_activation": "mish"}),
        SystemSpec("S4", "Joint training, ASR loss only", "systems",
                   {"train.mode": "joint", "se.mask_activation": "relu"}),
        SystemSpec("S5", "MTJL, beta=0.3, w/o phase", "systems",
                   {"train.mode": "mtjl", "weights.beta": 0.3, "se.phase": "discard",
                    "se.mask_activation": "relu"}),
        SystemSpec("S6", "MTJL, beta=0.3", "systems",
                   {"train.mode": "mtjl", "weights.beta": 0.3, "se.phase": "preserve",
                    "se.mask_activation": "relu"}),
        SystemSpec("S7", "DC-MTJL, beta=0.3, gamma=0.7", "systems",
                   {"train.mode": "dc-mtjl", "weights.beta": 0.3, "weights.gamma": 0.7,
                    "se.mask_activation": "mish"}),
    ]


GAMMA_SWEEP = (0.3, 0.4, 0.5, 0.6, 0.7)
ACTIVATION_SWEEP = ("relu", "mish", "metaacon")


def gamma_systems(gammas=GAMMA_SWEEP):
    return [SystemSpec(f"gamma={g:g}", f"DC-MTJL, gamma={g:g}", "gamma",
                       {"train.mode": "dc-mtjl", "weights.beta": 0.3, "weights.gamma": g})
            for g in gammas]


def activation_systems(kinds=ACTIVATION_SWEEP):
    names = {"relu": "ReLU", "mish": "Mish", "metaacon": "meta-ACON"}
    return [SystemSpec(f"act={k}", f"DC-MTJL, mask activation {names[k]}", "activation",
                       {"train.mode": "dc-mtjl", "weights.beta": 0.3, "weights.gamma": 0.7,
                        "se.mask_activation": k})
            for k in kinds]


@dataclass
class ComparisonPlan:
    """Comparison-suite settings read from a flat ``section.key = value`` file.

    ``plan.*`` keys pick what runs; every other key is a base training
    config entry shared by all systems.
    """

    base: dict = field(default_factory=dict)
    systems: tuple = ("S1", "S2", "S3", "S4", "S5", "S6", "S7")
    gammas: tuple = GAMMA_SWEEP
    activations: tuple = ACTIVATION_SWEEP
    out_dir: str | None = None
    workers: int = 1
    eval_split: str = "test"

    @classmethod
    def from_flat(cls, flat):
        flat = dict(flat)
        plan_keys = {k: flat.pop(k) for k in list(flat) if k.startswith("plan.")}

        def listing(key, default, conv=str):
            v = plan_keys.pop(key, None)
            if v is None:
                return default
            if isinstance(v, (list, tuple)):
                return tuple(conv(x) for x in v)
            return tuple(conv(x.strip()) for x in str(v).split(",") if x.strip())

        plan = cls(base=flat,
                   systems=listing("plan.systems", cls.systems),
                   gammas=listing("plan.gammas", GAMMA_SWEEP, float),
                   activations=listing("plan.activations", ACTIVATION_SWEEP),
                   out_dir=plan_keys.pop("plan.out_dir", None),
                   workers=int(plan_keys.pop("plan.workers", 1) or 1),
                   eval_split=plan_keys.pop("plan.eval_split", "test") or "test")
        if plan_keys:
            raise InvalidInputError(f"unknown plan keys: {sorted(plan_keys)}")
        return plan

    def specs(self):
        known = {s.key: s for s in table2_systems()}
        unknown = [k for k in self.systems if k not in known]
        if unknown:
            raise InvalidInputError(f"unknown systems {unknown}; choose from {sorted(known)}")
        return ([known[k] for k in self.systems] + gamma_systems(self.gammas)
                + activation_systems(self.activations))


def load_plan(path):
    from .training import parse_config_text

    with open(path, encoding="utf-8") as fh:
        flat = parse_config_text(fh.read())
    base = os.path.dirname(os.path.abspath(path))
    for key in ("corpus.dir", "plan.out_dir"):
        if flat.get(key) and not os.path.isabs(flat[key]):
            flat[key] = os.path.join(base, flat[key])
    return ComparisonPlan.from_flat(flat)


def _run_system(job):
    from .training import TrainConfig, Trainer, load_split

    spec, base, run_dir, eval_split = job
    flat = {**base, **spec.overrides}
    if run_dir:
        flat["run.dir"] = os.path.join(run_dir, spec.key.replace("=", "_"))
    cfg = TrainConfig.from_flat(flat)
    factors = (0.9, 1.0, 1.1) if cfg.speed_perturb else None
    start = time.perf_counter()
    trainer = Trainer(cfg, load_split(cfg, "train", factors), load_split(cfg, "valid"))
    result = trainer.run()
    test = load_split(cfg, eval_split)
    hyps = result.system.transcribe_utterances(test)
    score = corpus_wer([u.transcript for u in test], hyps)
    last = result.reports[-1] if result.reports else None
    return {"key": spec.key, "label": spec.label, "table": spec.table,
            "config": {k: v for k, v in spec.overrides.items()},
            "cer": score.wer, "counts": score.to_dict(),
            "valid_cer": result.best_cer, "steps": result.steps_run,
            "final_loss": None if last is None else last.loss_joint,
            "train_seconds": time.perf_counter() - start}


def run_comparison(plan, corpus_dir=None):
    """Train and score every system in ``plan``; returns the report dict."""
    base = dict(plan.base)
    if corpus_dir:
        base["corpus.dir"] = corpus_dir
    if not base.get("corpus.dir"):
        raise InvalidInputError("comparison needs corpus.dir")
    jobs = [(s, base, plan.out_dir, plan.eval_split) for s in plan.specs()]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            rows = list(pool.map(_run_system, jobs))
    else:
        rows = [_run_system(j) for j in jobs]
    report = {"note": NOTE, "metric": "CER", "eval_split": plan.eval_split, "rows": rows}
    if plan.out_dir:
        os.makedirs(plan.out_dir, exist_ok=True)
        with open(os.path.join(plan.out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        with open(os.path.join(plan.out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(format_report(report))
    return report


TABLE_TITLES = {
    "systems": "System comparison",
    "gamma": "DC-MTJL clean-data weight sweep (beta=0.3)",
    "activation": "DC-MTJL mask activation sweep (beta=0.3, gamma=0.7)",
}


def format_report(report):
    lines = [report["note"], ""]
    for table, title in TABLE_TITLES.items():
        rows = [r for r in report["rows"] if r["table"] == table]
        if not rows:
            continue
        width = max(len(r["label"]) for r in rows)
        lines.append(title)
        lines.append(f"  {'ID':<12} {'System':<{width}}  {'CER %':>7}  {'steps':>6}")
        for r in rows:
            lines.append(f"  {r['key']:<12} {r['label']:<{width}}  {100 * r['cer']:7.2f}  {r['steps']:>6}")
        lines.append("")
    return "\n".join(lines)


def report_json(report):
    return json.dumps(report, indent=2, default=lambda o: asdict(o))
