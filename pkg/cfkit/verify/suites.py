"""Invariant suites: every structural property checked as a seeded assertion."""

import logging
from typing import Callable, Dict, List, Tuple

import numpy as np

from cfkit.analysis import count_macs, count_params, emit_report, parse_csv_report
from cfkit.blocks.base import ParamStore
from cfkit.blocks.ffn import FeedForward, TransBDCBlock
from cfkit.blocks.model import ContextFormer
from cfkit.config import (
    AblationRow,
    ablation_configs,
    classification_config,
    micro_config,
    seg_448_config,
    seg_512_config,
)
from cfkit.exceptions import CfkitException, UsageError
from cfkit.gme import ImageU8, build_gme_stack, edge_map, palette, sobel_magnitude, to_gray
from cfkit.tensor import ops
from cfkit.types import CheckResult, ConvSpec, GradCheckCase, SuiteReport, TransBDCSpec
from cfkit.verify.gradcheck import gradcheck
from cfkit.verify.oracle import default_cases, describe_failure, oracle_sweep

logger = logging.getLogger(__name__)

Check = Callable[[int, int], str]

TARGET_PARAMS = 1.68e6
CLS_PARAMS = 1.79e6
TARGET_GFLOPS = 0.58
SEG448_GFLOPS = 0.5
CLS_GFLOPS = 0.13
GFLOPS_BAND = (0.85, 1.15)
PARAMS_BAND = (0.95, 1.05)
ABLATION_BAND = (0.93, 1.07)
MICRO_COORDS = 32
# reference parameter counts of the ablation grid, in ABLATION_ROWS order
ABLATION_TARGETS = (1.02e6, 1.10e6, 1.29e6, 1.38e6, 1.38e6, 1.41e6, 1.42e6, 1.43e6, 1.61e6, 1.68e6, 1.68e6)


def _within(value: float, target: float, low: float, high: float) -> bool:
    return target * low <= value <= target * high


# ---------------------------------------------------------------------- tensor


def _oracle(seed: int, trials: int) -> str:
    report = oracle_sweep(default_cases(seed=seed, trials=trials))
    assert report.passed, describe_failure(report)
    worst = max(report.results, key=lambda r: r.worst_diff)
    return f"{len(report.results)} cases, worst {worst.op} ({worst.values}) {worst.worst_diff:.3g}"


def _softmax_rows(seed: int, trials: int) -> str:
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((16, 33)) * 10
    s = ops.softmax_rows(m)
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12), "rows do not sum to 1"
    assert np.all(s > 0), "non-positive probability"
    return "rows sum to 1"


def _relu6_bounds(seed: int, trials: int) -> str:
    x = np.random.default_rng(seed).standard_normal((2, 3, 8, 8)) * 20
    y = ops.relu6(x)
    assert y.min() >= 0.0 and y.max() <= 6.0, "relu6 left [0, 6]"
    s = ops.sigmoid(x)
    assert np.all((s > 0) & (s < 1)), "sigmoid left (0, 1)"
    return "relu6 in [0, 6], sigmoid in (0, 1)"


def _identity_conv(seed: int, trials: int) -> str:
    x = np.random.default_rng(seed).standard_normal((1, 6, 5, 7))
    w = np.eye(6)[:, :, None, None]
    y = ops.conv2d(x, w, ConvSpec.pointwise(6, 6))
    assert np.array_equal(y, x), "identity pointwise conv changed its input"
    return "identity 1x1 conv is neutral"


def _resampling(seed: int, trials: int) -> str:
    x = np.random.default_rng(seed).standard_normal((1, 3, 4, 5))
    assert np.allclose(ops.upsample_bilinear(x, 4, 5), x), "same-size upsample changed values"
    const = np.full((1, 2, 3, 3), 1.5)
    assert np.allclose(ops.upsample_bilinear(const, 12, 9), 1.5), "upsample does not preserve constants"
    parts = ops.split_channels(ops.concat_channels([x, x[:, :1]]), [3, 1])
    assert np.array_equal(parts[0], x) and np.array_equal(parts[1], x[:, :1]), "split does not invert concat"
    return "upsample identity/constants, split inverts concat"


# ------------------------------------------------------------------------- gme


def _checkerboard() -> ImageU8:
    board = ((np.arange(8)[:, None] // 2 + np.arange(8)[None, :] // 2) % 2) * 255
    return ImageU8.from_array(np.repeat(board[:, :, None], 3, axis=2).astype(np.uint8))


def _sobel_flat(seed: int, trials: int) -> str:
    flat = ImageU8.from_array(np.full((6, 9, 3), 77, dtype=np.uint8))
    mag = sobel_magnitude(to_gray(flat))
    assert np.all(mag == 0), "constant image has gradient"
    assert np.all(edge_map(mag) == 0), "constant image has edges"
    return "constant image: zero magnitude, no edges"


def _otsu_checkerboard(seed: int, trials: int) -> str:
    stack = build_gme_stack(_checkerboard())
    edges = stack.edges
    assert set(np.unique(edges)) <= {0.0, 1.0}, "edge map is not binary"
    count = int(edges.sum())
    assert count == 60, f"expected 60 edge pixels, got {count}"
    return "2x2-block checkerboard: 60/64 edge pixels"


def _stack_layout(seed: int, trials: int) -> str:
    rng = np.random.default_rng(seed)
    img = ImageU8.from_array(rng.integers(0, 256, size=(16, 12, 3)))
    five = build_gme_stack(img, 5)
    three = build_gme_stack(img, 3)
    assert five.tensor.shape == (1, 5, 16, 12) and three.tensor.shape == (1, 3, 16, 12), "bad stack shapes"
    assert np.array_equal(five.tensor[:, :3], three.tensor), "RGB channels depend on the GME toggle"
    assert three.magnitude is None and three.edges is None, "GME maps computed for a 3-channel stack"
    return "5- and 3-channel stacks share RGB"


def _palette(seed: int, trials: int) -> str:
    colours = palette(150)
    assert np.array_equal(colours, palette(150)), "palette is not deterministic"
    assert len({tuple(c) for c in colours[:16]}) == 16, "first 16 colours collide"
    return "palette deterministic and distinct"


# ---------------------------------------------------------------------- blocks


def _seg512_shapes(seed: int, trials: int) -> str:
    model = ContextFormer(seg_512_config())
    nodes = {n.name: n for n in model.costs((1, 5, 512, 512))}
    taps = [model.tpem.stages[i].layers[-1].name for i in range(4)]
    tap_hw = [nodes[f"{t}.project.bn"].output_shape[2] for t in taps]
    assert tap_hw == [128, 64, 32, 16], f"pyramid at {tap_hw}"
    assert nodes["tpem.concat"].output_shape == [1, 208, 8, 8], f"x_f {nodes['tpem.concat'].output_shape}"
    merged = [nodes[f"fmm.scale{i}.merge"].output_shape for i in range(4)]
    assert merged == [[1, 160, s, s] for s in (8, 16, 32, 64)], f"fmm outputs {merged}"
    assert model.output_shape((1, 5, 512, 512)) == (1, 150, 64, 64), "logits shape"
    return "taps /4../32, x_f 208x/64, fmm 160 at four scales"


def _micro_forward(seed: int, trials: int) -> str:
    model = ContextFormer(micro_config())
    params = model.init_params(seed, np.float64)
    x = np.random.default_rng(seed).standard_normal((1, 5, 64, 64))
    run = model.run(x, params)
    assert [t.shape[2] for t in run.pyramid.taps] == [16, 8, 4, 2], "micro pyramid"
    assert run.bottleneck.shape == run.pyramid.x_f.shape == (1, 208, 2, 2), "bottleneck shape"
    assert run.output.shape == model.output_shape(x.shape), "static and dynamic shapes disagree"
    again = model.forward(x, params)
    assert np.array_equal(again, run.output), "forward is not deterministic"
    return "micro forward shapes match the cost model"


def _residual_neutral(seed: int, trials: int) -> str:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 208, 2, 2))
    ffn = FeedForward("ffn", 208, 2)
    store = ParamStore.initialize(ffn.parameters(), seed, np.float64)
    store["ffn.project.bn.weight"] = np.zeros(208)
    assert np.allclose(ffn.forward(x, store), x), "FFN with zero output scale is not identity"

    spec = micro_config().attention_spec()
    off = TransBDCBlock("blk", spec, TransBDCSpec(use_attention=False, use_dw3=False, use_dw1=False,
                                                   use_dwsep=False, use_channel_attention=False))
    store = ParamStore.initialize(off.parameters(), seed, np.float64)
    store["blk.ffn.project.bn.weight"] = np.zeros(208)
    assert np.allclose(off.forward(x, store), x), "block with every branch off is not identity"
    return "zeroed residual bodies are identities"


def _linear_gradcheck(seed: int, trials: int) -> str:
    case = GradCheckCase(config=micro_config(), param_filter=["heads.seg.conv2.*"], max_coords=8, seed=seed)
    report = gradcheck(case)
    assert report.passed and report.worst.rel_error < 1e-7, f"linear-only gradcheck {report.worst}"
    return f"linear-only worst rel error {report.worst.rel_error:.2g}"


def _micro_gradcheck(seed: int, trials: int) -> str:
    case = GradCheckCase(config=micro_config(), max_coords=MICRO_COORDS, seed=seed)
    report = gradcheck(case)
    assert report.numeric_error is None, report.numeric_error
    assert not report.undersampled, f"too few usable coordinates: {report.undersampled}"
    assert report.passed, f"worst {report.worst}"
    return (
        f"{report.checked} coordinates over {len(report.coverage)} tensors, "
        f"{report.skipped_kinks} kinks skipped, worst rel error {report.worst.rel_error:.2g}"
    )


# -------------------------------------------------------------------- analysis


def _param_accounting(seed: int, trials: int) -> str:
    seg = count_params(ContextFormer(seg_512_config())).total.params
    cls = count_params(ContextFormer(classification_config())).total.params
    assert _within(seg, TARGET_PARAMS, *PARAMS_BAND), f"segmentation params {seg}"
    assert _within(cls, CLS_PARAMS, *PARAMS_BAND), f"classification params {cls}"
    return f"seg {seg / 1e6:.3f}M, cls {cls / 1e6:.3f}M"


def _flop_accounting(seed: int, trials: int) -> str:
    g448 = count_macs(ContextFormer(seg_448_config())).gflops
    g224 = count_macs(ContextFormer(classification_config())).gflops
    assert _within(g448, SEG448_GFLOPS, *GFLOPS_BAND), f"448 GFLOPs {g448:.3f}"
    assert _within(g224, CLS_GFLOPS, *GFLOPS_BAND), f"224 GFLOPs {g224:.3f}"
    return f"{g448:.3f} / {g224:.3f} GFLOPs"


def _flop_accounting_512(seed: int, trials: int) -> str:
    report = count_macs(ContextFormer(seg_512_config()))
    g512 = report.gflops
    by_module = ", ".join(f"{r.name} {r.macs / 1e9:.3f}" for r in report.rollups)
    assert _within(g512, TARGET_GFLOPS, *GFLOPS_BAND), (
        f"512 GFLOPs {g512:.3f} is {g512 / TARGET_GFLOPS - 1:+.1%} off {TARGET_GFLOPS} ({by_module})"
    )
    return f"{g512:.3f} GFLOPs ({by_module})"


def _rollups(seed: int, trials: int) -> str:
    report = count_macs(ContextFormer(micro_config()))
    for field in ("params", "macs", "minor_ops", "act_bytes"):
        assert sum(getattr(r, field) for r in report.rollups) == getattr(report.total, field), field
    parsed = parse_csv_report(emit_report(report, "csv"))
    assert parsed.nodes == [n.model_copy(update={"output_shape": []}) for n in report.nodes], "csv nodes"
    assert parsed.total == report.total and parsed.rollups == report.rollups, "csv totals"
    return "rollups sum to totals; csv round-trips"


def _ablation_params() -> List[Tuple[AblationRow, int]]:
    return [(row, count_params(ContextFormer(cfg)).total.params) for row, cfg in ablation_configs(seg_512_config())]


def _ablation_order(seed: int, trials: int) -> str:
    rows = _ablation_params()
    for half in (rows[:5], rows[5:]):
        counts = [p for row, p in half if not row.gme]
        steps = [b - a for a, b in zip(counts, counts[1:])]
        assert all(s > 0 for s in steps), f"not increasing: {counts}"
        # the last three steps add dw1, dwsep and channel attention in both halves
        dw1, dwsep, gate = steps[-3:]
        assert dwsep > max(dw1, gate), f"dwsep step {dwsep} is not the largest BDC step {steps}"
        gme = [p for row, p in half if row.gme]
        assert abs(gme[0] - counts[-1]) < 5000, "GME row differs by more than the stem input channels"
    return " ".join(f"{p / 1e6:.2f}" for _, p in rows)


def _ablation_bands(seed: int, trials: int) -> str:
    rows = _ablation_params()
    misses = [
        f"{row.label} {p / 1e6:.3f}M vs {target / 1e6:.2f}M ({p / target - 1:+.1%})"
        for (row, p), target in zip(rows, ABLATION_TARGETS)
        if not _within(p, target, *ABLATION_BAND)
    ]
    assert not misses, "outside the band: " + "; ".join(misses)
    return f"{len(rows)} rows within {ABLATION_BAND[1] - 1:.0%}"


SUITES: Dict[str, List[Check]] = {
    "tensor": [_oracle, _softmax_rows, _relu6_bounds, _identity_conv, _resampling],
    "gme": [_sobel_flat, _otsu_checkerboard, _stack_layout, _palette],
    "blocks": [_seg512_shapes, _micro_forward, _residual_neutral, _linear_gradcheck, _micro_gradcheck],
    "analysis": [
        _param_accounting,
        _flop_accounting,
        _flop_accounting_512,
        _rollups,
        _ablation_order,
        _ablation_bands,
    ],
}


def run_invariant_suite(name: str, seed: int = 0, trials: int = 100) -> SuiteReport:
    """
    Run one suite (or "all") with a fixed seed.

    Raises:
        UsageError: If the suite name is unknown
    """
    if name == "all":
        checks = [c for suite in SUITES.values() for c in suite]
    elif name in SUITES:
        checks = SUITES[name]
    else:
        raise UsageError(f"unknown suite '{name}' (expected one of {', '.join([*SUITES, 'all'])})", field="suite")

    results = []
    for check in checks:
        label = check.__name__.lstrip("_")
        try:
            results.append(CheckResult(name=label, passed=True, detail=check(seed, trials)))
        except (AssertionError, CfkitException) as e:
            results.append(CheckResult(name=label, passed=False, detail=str(e)))
            logger.warning("%s/%s failed: %s", name, label, e)
    report = SuiteReport(suite=name, seed=seed, passed=all(r.passed for r in results), checks=results)
    logger.info("suite %s: %d/%d checks passed", name, sum(r.passed for r in results), len(results))
    return report
