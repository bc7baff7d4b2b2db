"""End-to-end runs: data, both training stages and the comparison report."""
import logging
import time
from dataclasses import dataclass, field, replace

from . import evaluation as E
from .config import RunConfig
from .dataset import build_splits, make_verification_pairs
from .training import train_extractor, train_generator

log = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    seed: int
    extractor_accuracy: float
    reports: dict  # method name -> EvalReport
    histories: dict = field(default_factory=dict)
    networks: dict = field(default_factory=dict)
    seconds: float = 0.0

    def auc(self, name):
        return self.reports[name].auc


def run_experiment(cfg=RunConfig(), losses=("recon", "recog", "joint"), seed=None):
    """Train the extractor, one generator per loss kind, and evaluate all
    of them next to the bicubic and HR baselines on the held-out identities."""
    start = time.perf_counter()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    train, test = build_splits(cfg.n_identities, cfg.samples_per_id, cfg.train_fraction, cfg.seed,
                               cfg.render_settings())
    ext_cfg = cfg.extractor_config(n_classes=len({s.y for s in train}))
    f, ext_hist = train_extractor(train, ext_cfg, cfg.extractor_train_config())
    f = f.freeze()
    acc = ext_hist.rows[-1]["accuracy"]
    log.info("seed %d: extractor training accuracy %.3f", cfg.seed, acc)

    pairs = make_verification_pairs(test, cfg.pairs_negatives, cfg.seed)
    methods = [E.hr_baseline_method(), E.bicubic_method(cfg.scale)]
    histories, nets = {"extractor": ext_hist}, {"extractor": f}
    for kind in losses:
        G, hist = train_generator(train, f, cfg.generator_config(), cfg.generator_train_config(kind))
        histories[kind], nets[kind] = hist, G
        methods.append(E.generator_method(kind, G))
    reports = {m.name: E.evaluate_method(pairs, m, f, cfg.patch) for m in methods}
    return ExperimentResult(cfg.seed, acc, reports, histories, nets, time.perf_counter() - start)
