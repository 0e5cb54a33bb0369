"""Static cost model, latency microbenchmark and report emission."""

import csv
import hashlib
import io
import logging
import time
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from cfkit.blocks.base import ParamStore
from cfkit.blocks.model import MODULES, ContextFormer
from cfkit.config import ablation_configs
from cfkit.exceptions import ConfigurationError, UsageError
from cfkit.tensor import ops
from cfkit.types import AblationEntry, CostReport, LatencyRecord, ModelConfig, NodeCost, Rollup

logger = logging.getLogger(__name__)

ReportFormat = Literal["json", "csv"]
CSV_FIELDS = ["section", "name", "kind", "params", "macs", "minor_ops", "act_bytes"]
_TOTALS = ("params", "macs", "minor_ops", "act_bytes")


def _rollups(nodes: Sequence[NodeCost]) -> Tuple[List[Rollup], Rollup]:
    rollups = {m: Rollup(name=m) for m in MODULES}
    total = Rollup(name="total")
    for node in nodes:
        if node.module not in rollups:
            raise ConfigurationError(f"node '{node.name}' belongs to no known module")
        for field in _TOTALS:
            value = getattr(node, field)
            setattr(rollups[node.module], field, getattr(rollups[node.module], field) + value)
            setattr(total, field, getattr(total, field) + value)
    return list(rollups.values()), total


def _default_shape(model: ContextFormer) -> Tuple[int, int, int, int]:
    c = model.config
    return (1, c.input_channels, c.input_h, c.input_w)


def _excluded(model: ContextFormer, shape: Tuple[int, ...], itemsize: int) -> List[NodeCost]:
    """Costs outside the headline figure: GME preprocessing and logit upsampling."""
    n, c, h, w = shape
    out: List[NodeCost] = []
    if c == 5:
        # two 3x3 stencils per pixel; luma, magnitude, threshold and two standardizations as minor ops
        out.append(
            NodeCost(
                name="gme.sobel",
                kind="sobel",
                macs=n * h * w * 18,
                minor_ops=n * h * w * 5,
                act_bytes=n * 2 * h * w * itemsize,
                output_shape=[n, 2, h, w],
            )
        )
    if model.seg_head is not None:
        k = model.config.num_classes
        out.append(
            NodeCost(
                name="logits.upsample",
                kind="upsample_bilinear+argmax",
                macs=n * k * h * w * 4,
                minor_ops=n * k * h * w,
                act_bytes=n * k * h * w * itemsize,
                output_shape=[n, k, h, w],
            )
        )
    return out


def count_params(model: ContextFormer) -> CostReport:
    """Exact parameter counts per node and per module; other cost fields are zero."""
    nodes = []
    for node in model.costs(_default_shape(model)):
        if node.params:
            nodes.append(NodeCost(name=node.name, kind=node.kind, params=node.params, output_shape=node.output_shape))
    rollups, total = _rollups(nodes)
    return CostReport(config_name=model.config.name, nodes=nodes, rollups=rollups, total=total)


def count_macs(
    model: ContextFormer,
    input_shape: Optional[Sequence[int]] = None,
    itemsize: int = 4,
) -> CostReport:
    """
    Full static cost report for one input shape.

    MACs count k_h*k_w*C_in_per_group*C_out*H_out*W_out per conv, in*out per
    linear row and QK^T plus AV for attention. Elementwise work lands in
    ``minor_ops``. Activation bytes assume no operator fusion.
    """
    shape = tuple(input_shape) if input_shape is not None else _default_shape(model)
    nodes = model.costs(shape, itemsize)
    rollups, total = _rollups(nodes)
    report = CostReport(
        config_name=model.config.name,
        input_shape=list(shape),
        nodes=nodes,
        rollups=rollups,
        total=total,
        gflops=total.macs / 1e9,
        gflops_2x=2 * total.macs / 1e9,
        excluded=_excluded(model, shape, itemsize),
    )
    logger.info(
        "%s @ %s: %d params, %.4f GFLOPs", model.config.name, "x".join(map(str, shape)), total.params, report.gflops
    )
    return report


def bench_latency(
    model: ContextFormer,
    params: ParamStore,
    input_shape: Optional[Sequence[int]] = None,
    warmup: int = 10,
    iters: int = 50,
    threads: int = 1,
    seed: int = 0,
) -> LatencyRecord:
    """Median and p90 wall-clock forward latency on a fixed random input.

    The bench owns the process while it runs; do not run two at once.
    """
    if iters < 1:
        raise ConfigurationError(f"iters must be >= 1, got {iters}", field="iters")
    if warmup < 0:
        raise ConfigurationError(f"warmup must be >= 0, got {warmup}", field="warmup")
    shape = tuple(input_shape) if input_shape is not None else _default_shape(model)
    x = np.random.default_rng(seed).standard_normal(shape).astype(params.dtype)

    previous = ops.get_num_threads()
    ops.set_num_threads(threads)
    try:
        for _ in range(warmup):
            model.forward(x, params)
        samples = []
        out = None
        for _ in range(iters):
            t0 = time.perf_counter()
            out = model.forward(x, params)
            samples.append((time.perf_counter() - t0) * 1000.0)
    finally:
        ops.set_num_threads(previous)

    record = LatencyRecord(
        warmup_iters=warmup,
        measure_iters=iters,
        median_ms=float(np.median(samples)),
        p90_ms=float(np.percentile(samples, 90)),
        input_shape=list(shape),
        thread_count=threads,
        samples_ms=samples,
        output_digest=hashlib.sha256(np.ascontiguousarray(out).tobytes()).hexdigest(),
    )
    logger.info("latency %s: median %.2f ms, p90 %.2f ms", model.config.name, record.median_ms, record.p90_ms)
    return record


def profile(
    model: ContextFormer,
    params: ParamStore,
    input_shape: Optional[Sequence[int]] = None,
    warmup: int = 10,
    iters: int = 50,
    threads: int = 1,
    seed: int = 0,
) -> CostReport:
    """count_macs plus a latency record."""
    report = count_macs(model, input_shape)
    latency = bench_latency(model, params, report.input_shape, warmup, iters, threads, seed)
    return report.model_copy(update={"latency": latency})


def emit_report(report: CostReport, fmt: str = "json") -> str:
    """Render a report as JSON (schema cfkit_report_v1) or CSV.

    CSV rows: one per node, one per excluded item, one per module rollup and a
    final total row.
    """
    if fmt == "json":
        return report.model_dump_json(indent=2)
    if fmt != "csv":
        raise UsageError(f"unknown report format '{fmt}' (expected json or csv)", field="format")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for section, rows in (("node", report.nodes), ("excluded", report.excluded)):
        for n in rows:
            writer.writerow([section, n.name, n.kind, n.params, n.macs, n.minor_ops, n.act_bytes])
    for r in report.rollups:
        writer.writerow(["rollup", r.name, "", r.params, r.macs, r.minor_ops, r.act_bytes])
    t = report.total
    writer.writerow(["total", t.name, "", t.params, t.macs, t.minor_ops, t.act_bytes])
    return buf.getvalue()


def parse_csv_report(text: str) -> CostReport:
    """Rebuild nodes, rollups and totals from ``emit_report(..., "csv")`` output."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_FIELDS:
        raise UsageError(f"unexpected CSV header {reader.fieldnames}", field="format")
    nodes: List[NodeCost] = []
    excluded: List[NodeCost] = []
    rollups: List[Rollup] = []
    total = Rollup(name="total")
    for row in reader:
        values: Dict[str, int] = {f: int(row[f]) for f in _TOTALS}
        if row["section"] in ("node", "excluded"):
            target = nodes if row["section"] == "node" else excluded
            target.append(NodeCost(name=row["name"], kind=row["kind"], **values))
        elif row["section"] == "rollup":
            rollups.append(Rollup(name=row["name"], **values))
        elif row["section"] == "total":
            total = Rollup(name=row["name"], **values)
        else:
            raise UsageError(f"unknown CSV section '{row['section']}'", field="section")
    return CostReport(
        nodes=nodes,
        excluded=excluded,
        rollups=rollups,
        total=total,
        gflops=total.macs / 1e9,
        gflops_2x=2 * total.macs / 1e9,
    )


def write_report(report: CostReport, path: Union[str, Path], fmt: str = "json") -> None:
    Path(path).write_text(emit_report(report, fmt) + ("\n" if fmt == "json" else ""), encoding="utf-8")


def empty_report(name: str = "") -> CostReport:
    rollups, total = _rollups([])
    return CostReport(config_name=name, rollups=rollups, total=total)


def ablation_table(base: ModelConfig, input_shape: Optional[Sequence[int]] = None) -> List[AblationEntry]:
    """Params and GFLOPs of every ablation row of ``base``, in table order."""
    entries = []
    for row, config in ablation_configs(base):
        model = ContextFormer(config)
        shape = None if input_shape is None else (input_shape[0], config.input_channels, *input_shape[2:])
        report = count_macs(model, shape)
        entries.append(AblationEntry(label=row.label, **row.model_dump(), params=report.total.params, gflops=report.gflops))
    return entries
