"""The synthetic transfer experiment: every pre-training / fine-tuning arm on one seed."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import LabeledDataset, build_vocab
from .synthdata import SynthConfig, gap_probe, gen_synthetic_corpus, linear_probe
from .trainer import TrainConfig, centroid_spread, converter_rows, prepare_model, run_stage

ARMS = ("PT+FT", "VI-PT+FT", "VI-PT+VI-FT", "PT+VI-FT")
# fine-tuning is shorter and gentler than pre-training, as with a real checkpoint
DESK_FT = {"epochs": 30, "lr_model": 2e-4}


def desk_train_config(**kw) -> TrainConfig:
    """Small, fast settings used for the synthetic experiments."""
    base = dict(t=48, d_model=32, num_queries=10, nhead=2, epochs=80, lr_model=1e-3,
                lr_classifier=1e-2, lambda_src=0.1, lambda_adv=0.1)
    base.update(kw)
    return TrainConfig(**base)


def converter_matrix(model, datasets) -> tuple[np.ndarray, np.ndarray]:
    X = np.concatenate([converter_rows(model, it) for ds in datasets for it in ds])
    y = np.concatenate([it.views for ds in datasets for it in ds])
    return X, y


@dataclass
class SeedResult:
    seed: int
    raw_probe: float
    vi_pt_probe: float
    pt_probe: float
    soda_cider: dict = field(default_factory=dict)      # arm or arm@mode → target SODA-CIDEr
    spread_init: float = 0.0
    spread_final: float = 0.0
    spread_init_scaled: float = 0.0
    spread_final_scaled: float = 0.0
    seconds: float = 0.0


def target_soda_cider(result) -> float:
    return result.reports[result.best_epoch]["soda"]["CIDEr"] if result.best_epoch is not None else 0.0


def run_seed(seed: int, synth: SynthConfig | None = None, train: TrainConfig | None = None,
             pt_epochs: int | None = None, ft_epochs: int | None = None, ho_mode: bool = True,
             mode: str = "VC", ft_overrides: dict | None = None, log=None) -> SeedResult:
    t0 = time.time()
    synth = (synth or SynthConfig()).replace(seed=seed)
    train = (train or desk_train_config()).replace(seed=seed, t=synth.t)
    corpus = gen_synthetic_corpus(synth)
    src, tgt = corpus.source, corpus.target[mode]
    vocab = build_vocab([src, tgt])
    raw_probe = gap_probe([src, tgt], probe_seed=seed)

    pt_cfg = train.replace(epochs=pt_epochs or train.epochs)
    ft = DESK_FT | (ft_overrides or {})
    if ft_epochs:
        ft["epochs"] = ft_epochs
    ft_cfg = train.replace(**ft)
    pt = run_stage(pt_cfg.replace(stage="PT"), src, None, vocab)
    vipt = run_stage(pt_cfg.replace(stage="VI-PT"), src, None, vocab)

    src_only = [src]
    pt_probe = linear_probe(*converter_matrix(pt.model, src_only), seed=seed)
    vi_probe = linear_probe(*converter_matrix(vipt.model, src_only), seed=seed)

    res = SeedResult(seed, raw_probe, vi_probe, pt_probe)
    inits = {"PT": pt.model, "VI-PT": vipt.model}
    finals = {}
    for arm in ARMS:
        first, second = arm.split("+")
        r = run_stage(ft_cfg.replace(stage=second), src, tgt, vocab, init=inits[first])
        res.soda_cider[arm] = target_soda_cider(r)
        finals[arm] = r.model
        if log:
            log(f"seed {seed} {arm}: SODA-CIDEr {res.soda_cider[arm]:.4f}")
    if ho_mode:
        for m in ("V", "VC+HO"):
            tgt_m = corpus.target[m]
            r = run_stage(ft_cfg.replace(stage="FT", mode=m), src, tgt_m, vocab, init=pt.model)
            res.soda_cider[f"PT+FT@{m}"] = target_soda_cider(r)
            if log:
                log(f"seed {seed} PT+FT@{m}: SODA-CIDEr {res.soda_cider[f'PT+FT@{m}']:.4f}")

    both = [src, tgt]
    init_model = prepare_model(ft_cfg.replace(stage="FT"), src, tgt, vocab, None, np.random.default_rng(seed))
    X0, y0 = converter_matrix(init_model, both)
    X1, y1 = converter_matrix(finals["VI-PT+VI-FT"], both)
    res.spread_init, res.spread_final = centroid_spread(y0, X0), centroid_spread(y1, X1)
    res.spread_init_scaled = centroid_spread(y0, X0, scale_free=True)
    res.spread_final_scaled = centroid_spread(y1, X1, scale_free=True)
    res.seconds = time.time() - t0
    return res
