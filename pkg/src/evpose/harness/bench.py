"""Host-CPU throughput: representation building and network forward passes.

These numbers describe the machine running the benchmark. They are not
comparable to neuromorphic hardware latency or power figures.
"""

from __future__ import annotations

import json
import platform
import statistics
import time
from pathlib import Path

import numpy as np

from .. import events, kernels, nn, representations, scene
from .models import build_network

HOST_LABEL = "host CPU (numpy), not comparable to neuromorphic hardware"


def _median_time(fn, runs):
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_stream(seed=0, duration_s=1.0):
    """A fixed tumbling-target stream for throughput measurements."""
    traj = scene.Trajectory(
        q0=np.array([0.9256, 0.2863, 0.2364, 0.0731]), t0=np.array([0.1, -0.1, 4.0]),
        omega=np.radians([10.0, -15.0, 20.0]), v=np.array([0.05, 0.0, 0.0]), duration=duration_s, seed=seed,
    )
    return scene.generate_events(scene.TargetModel.spacecraft(), traj, scene.CameraIntrinsics.default())


def bench_representations(stream, delta_t_us=50_000, runs=5, backends=None):
    wins = [w for w in events.windows(stream, delta_t_us, t0=0) if len(w)]
    n = sum(len(w) for w in wins)
    out = {}
    for backend in backends or kernels.available_backends():
        kernels.use_backend(backend)
        try:
            for kind in representations.ReprKind:
                s = _median_time(lambda: [representations.build_frame(kind, w) for w in wins], runs)
                out[f"{kind.label}/{backend}"] = {"events": n, "median_s": s, "events_per_s": n / s if s > 0 else None}
        finally:
            kernels.use_backend(None)
    return out


def bench_networks(roi_size=64, batch=32, runs=5, seed=0):
    rng = np.random.default_rng(seed)
    out = {}
    for head in ("coordinate", "heatmap"):
        net = build_network(head, 2, roi_size, seed)
        x = rng.random((batch, 2, roi_size, roi_size), dtype=np.float32)
        regimes = {"float": None, "fake_quant": (4, 4) if head == "coordinate" else (8, 8)}
        for name, bits in regimes.items():
            if bits:
                nn.apply_quantization(net, *bits)
                nn.calibrate(net, [x])
            mode = "float" if bits is None else "fake_quant"
            s = _median_time(lambda: nn.forward(net, x, mode, keep_cache=False), runs)
            out[f"{head}/{name}"] = {"batch": batch, "median_s": s, "forward_per_s": batch / s}
    return out


def run_bench(config, out, log=print):
    runs = max(5, config.bench_runs)
    stream = bench_stream(config.seed)
    result = {
        **config.provenance(),
        "label": HOST_LABEL,
        "machine": platform.machine(),
        "python": platform.python_version(),
        "default_backend": kernels.BACKEND,
        "runs": runs,
        "representations": bench_representations(stream, config.dataset.delta_t_us, runs),
        "networks": bench_networks(config.roi_size, config.train.batch, runs, config.seed),
    }
    rdir = Path(out) / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    (rdir / "bench.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    log(f"throughput ({HOST_LABEL}), median of {runs} runs")
    for k, v in result["representations"].items():
        log(f"  build {k:20s} {v['events_per_s']:14,.0f} events/s")
    for k, v in result["networks"].items():
        log(f"  forward {k:20s} {v['forward_per_s']:10,.1f} samples/s")
    return result
