"""The representation x regime x top-k evaluation grid."""

from __future__ import annotations

from pathlib import Path

from .. import metrics
from . import dataset, evaluation, training


def run_matrix(config, out, log=print):
    """Train (or load) every model of the grid, evaluate each top-k and merge the rows.

    Rows are ordered representation, then regime, then top-k, exactly as
    listed in the config.
    """
    rows = []
    for rep in config.matrix_representations:
        base = config.replace(representation=rep)
        test = dataset.load_split(base, out, "test")
        for head, regime in config.matrix_regimes:
            cfg = base.replace(head=head, regime=regime)
            net = training.train_or_load(cfg, out, log) if cfg.eval_mode == "network" else None
            results = evaluation.evaluate(cfg, out, net, split=test, top_ks=config.matrix_top_k)
            for k in config.matrix_top_k:
                rows.append(evaluation.report_row(cfg, results[k][0], k))
                log(f"{rows[-1].label():40s} PCK {rows[-1].aggregate.pck}")
    meta = evaluation.report_meta(config, {
        "grid": {
            "representations": list(config.matrix_representations),
            "regimes": [list(r) for r in config.matrix_regimes],
            "top_k": list(config.matrix_top_k),
        },
    })
    report = metrics.RunReport(rows, meta)
    rdir = Path(out) / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    report.save(rdir / f"matrix_s{config.seed}")
    log(report.to_csv())
    return report
