"""Structural analysis of built models: parameter counts, symbolic shape
traces, and per-variant overhead tables.

Two totals are reported. ``strict_total`` enumerates every parameter in the
graph. ``paper_convention_total`` counts classifier-side growth only, i.e.
it excludes the pointwise convolutions of shortcuts from blocks before the
last one — the accounting the published overhead columns follow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .backbone import MV2Block, MobileViTBlock
from .config import VariantConfig, resolve_variant
from .layers import BatchNorm2d, Conv2d, LayerNorm, Linear, MultiHeadAttention, TransformerLayer
from .model import ExMobileViT, MobileViTS, build_model


@dataclass(frozen=True)
class LayerRow:
    name: str
    kind: str
    out_shape: tuple[int, ...]
    param_count: int
    macs: int


@dataclass
class AuditReport:
    variant: str
    rows: list[LayerRow]
    strict_total: int
    paper_convention_total: int
    classifier_width: int
    overhead_vs_baseline_percent: float
    flops_estimate: int

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "strict_total": self.strict_total,
            "paper_convention_total": self.paper_convention_total,
            "strict_total_m": display_m(self.strict_total),
            "paper_convention_total_m": display_m(self.paper_convention_total),
            "classifier_width": self.classifier_width,
            "overhead_vs_baseline_percent": round(self.overhead_vs_baseline_percent, 2),
            "flops_estimate": self.flops_estimate,
            "layers": [
                {
                    "name": r.name,
                    "kind": r.kind,
                    "out_shape": list(r.out_shape),
                    "param_count": r.param_count,
                    "macs": r.macs,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        lines = [f"{'layer':<42} {'kind':<10} {'out_shape':<22} {'params':>10} {'MACs':>14}"]
        for r in self.rows:
            shape = "x".join(str(e) for e in r.out_shape)
            lines.append(f"{r.name:<42} {r.kind:<10} {shape:<22} {r.param_count:>10} {r.macs:>14}")
        lines.append("-" * 102)
        lines.append(f"variant: {self.variant}")
        lines.append(f"classifier width: {self.classifier_width}")
        lines.append(f"strict total: {self.strict_total} ({display_m(self.strict_total)}M)")
        lines.append(
            f"paper-convention total: {self.paper_convention_total} "
            f"({display_m(self.paper_convention_total)}M)"
        )
        lines.append(f"overhead vs baseline: {self.overhead_vs_baseline_percent:+.2f}%")
        lines.append(f"forward MACs (batch 1): {self.flops_estimate}")
        return "\n".join(lines)


def display_m(count: int) -> float:
    """Millions, rounded to 3 decimals (the tables' display convention)."""
    return round(count / 1e6, 3)


def conv_macs(out_shape, cin, kh, kw, groups) -> int:
    out_elems = 1
    for e in out_shape:
        out_elems *= e
    return out_elems * (kh * kw * cin // groups)


def _params(module) -> int:
    return sum(p.size for p in module.parameters())


def _conv_row(name, conv: Conv2d, in_shape) -> tuple[LayerRow, tuple]:
    out_shape = conv.out_shape(in_shape)
    cout, cin_g, kh, kw = conv.weight.shape
    macs = conv_macs(out_shape, cin_g * conv.groups, kh, kw, conv.groups)
    return LayerRow(name, "conv", out_shape, _params(conv), macs), out_shape


def _norm_row(name, module, shape, kind) -> LayerRow:
    elems = 1
    for e in shape:
        elems *= e
    return LayerRow(name, kind, shape, _params(module), 2 * elems)


def _linear_row(name, lin: Linear, in_shape) -> tuple[LayerRow, tuple]:
    dout, din = lin.weight.shape
    out_shape = tuple(in_shape[:-1]) + (dout,)
    batch = 1
    for e in in_shape[:-1]:
        batch *= e
    return LayerRow(name, "linear", out_shape, _params(lin), batch * dout * din), out_shape


def _audit_conv_norm_act(name, cna, in_shape):
    rows = []
    row, out_shape = _conv_row(f"{name}.conv", cna.conv, in_shape)
    rows.append(row)
    rows.append(_norm_row(f"{name}.norm", cna.norm, out_shape, "batchnorm"))
    return rows, out_shape


def _audit_mv2(name, block: MV2Block, in_shape):
    rows, shape = _audit_conv_norm_act(f"{name}.expand", block.expand, in_shape)
    r2, shape = _audit_conv_norm_act(f"{name}.depthwise", block.depthwise, shape)
    r3, shape = _audit_conv_norm_act(f"{name}.project", block.project, shape)
    return rows + r2 + r3, shape


def _audit_transformer(name, layer: TransformerLayer, seq_shape):
    n, t, d = seq_shape
    rows = [_norm_row(f"{name}.norm1", layer.norm1, seq_shape, "layernorm")]
    attn: MultiHeadAttention = layer.attn
    # q/k/v/o projections plus the two T x T matmuls per head
    macs = 4 * n * t * d * d + 2 * n * t * t * d
    rows.append(LayerRow(f"{name}.attn", "attention", seq_shape, _params(attn), macs))
    rows.append(_norm_row(f"{name}.norm2", layer.norm2, seq_shape, "layernorm"))
    row, hidden_shape = _linear_row(f"{name}.ffn1", layer.ffn1, seq_shape)
    rows.append(row)
    row, _ = _linear_row(f"{name}.ffn2", layer.ffn2, hidden_shape)
    rows.append(row)
    return rows, seq_shape


def _audit_mobilevit(name, block: MobileViTBlock, in_shape):
    b, c, h, w = in_shape
    ph, pw = block.spec.patch
    d = block.spec.transformer_dim
    rows, shape = _audit_conv_norm_act(f"{name}.local_conv", block.local_conv, in_shape)
    row, shape = _conv_row(f"{name}.local_proj", block.local_proj, shape)
    rows.append(row)
    seq_shape = (b * ph * pw, (h // ph) * (w // pw), d)
    for i, layer in enumerate(block.transformer):
        r, _ = _audit_transformer(f"{name}.transformer.{i}", layer, seq_shape)
        rows.extend(r)
    rows.append(_norm_row(f"{name}.out_norm", block.out_norm, seq_shape, "layernorm"))
    r, _ = _audit_conv_norm_act(f"{name}.unproj", block.unproj, (b, d, h, w))
    rows.extend(r)
    r, out_shape = _audit_conv_norm_act(f"{name}.fusion", block.fusion, (b, 2 * c, h, w))
    rows.extend(r)
    return rows, out_shape


def _audit_backbone(backbone, in_shape):
    rows, shape = _audit_conv_norm_act("stem", backbone.stem, in_shape)
    block_shapes = []
    for bi, block in enumerate(backbone.blocks, start=1):
        for mi, module in enumerate(block):
            name = f"block{bi}.{mi}"
            if isinstance(module, MV2Block):
                r, shape = _audit_mv2(name, module, shape)
            else:
                r, shape = _audit_mobilevit(name, module, shape)
            rows.extend(r)
        block_shapes.append(shape)
    return rows, block_shapes


def count_params(model, input_size: int | None = None, baseline_total: int | None = None) -> AuditReport:
    """Enumerate every parameter of a built model into an AuditReport."""
    config: VariantConfig = model.config
    size = input_size or config.input_size
    in_shape = (1, 3, size, size)
    rows, block_shapes = _audit_backbone(model.backbone, in_shape)

    early_shortcut_params = 0
    if isinstance(model, ExMobileViT):
        for spec, shortcut in zip(model.shortcut_specs, model.shortcuts):
            shape = block_shapes[spec.block_index - 1]
            row, _ = _conv_row(f"shortcut{spec.block_index}.pointwise", shortcut.pointwise, shape)
            rows.append(row)
            if spec.block_index < len(config.rho):
                early_shortcut_params += row.param_count
        width = model.classifier_spec.input_width
    elif isinstance(model, MobileViTS):
        row, _ = _conv_row("final_conv", model.final_conv, block_shapes[-1])
        rows.append(row)
        width = model.final_conv.weight.shape[0]
    else:
        raise TypeError(f"cannot audit {type(model).__name__}")

    row, _ = _linear_row("classifier", model.classifier, (1, width))
    rows.append(row)

    strict_total = sum(r.param_count for r in rows)
    paper_total = strict_total - early_shortcut_params
    flops = sum(r.macs for r in rows)

    if baseline_total is None:
        baseline_total = paper_total if config.name.startswith("mobilevit") else None
    if baseline_total is None:
        base_cfg = resolve_variant("mobilevit-s", {"profile": config.profile})
        if config.class_count != base_cfg.class_count:
            base_cfg = resolve_variant(
                "mobilevit-s", {"profile": config.profile, "class_count": config.class_count}
            )
        baseline_total = count_params(build_model(base_cfg, seed=0), size).paper_convention_total
    overhead = (paper_total - baseline_total) / baseline_total * 100.0

    return AuditReport(
        variant=config.name,
        rows=rows,
        strict_total=strict_total,
        paper_convention_total=paper_total,
        classifier_width=width,
        overhead_vs_baseline_percent=overhead,
        flops_estimate=flops,
    )


def trace_shapes(model, input_size: int) -> list[tuple[str, tuple[int, ...]]]:
    """Symbolic per-module shape trace for a batch-1 input."""
    if input_size % 32:
        raise ValueError(f"input_size {input_size} not divisible by 32")
    return model.backbone.trace((1, 3, input_size, input_size))


def block_output_shapes(model, input_size: int) -> list[tuple[int, ...]]:
    """Output shape of each of the five blocks."""
    rows = trace_shapes(model, input_size)
    shapes = []
    last_block = None
    for name, shape in rows:
        if name.startswith("block"):
            block = name.split(".", 1)[0]
            if block != last_block and last_block is not None:
                shapes.append(prev)
            last_block = block
            prev = shape
    shapes.append(prev)
    return shapes


def overhead_report(variants: list[str], profile: str = "imagenet") -> list[dict]:
    """Per-variant width and parameter overheads relative to the baseline."""
    base_cfg = resolve_variant("mobilevit-s", {"profile": profile})
    base_report = count_params(build_model(base_cfg, seed=0))
    base_width = base_report.classifier_width
    out = []
    for name in variants:
        cfg = resolve_variant(name, {"profile": profile} if profile != "imagenet" else None)
        report = count_params(
            build_model(cfg, seed=0), baseline_total=base_report.paper_convention_total
        )
        out.append(
            {
                "variant": name,
                "classifier_width": report.classifier_width,
                "classifier_percent": round(report.classifier_width / base_width * 100.0, 1),
                "strict_total": report.strict_total,
                "paper_convention_total": report.paper_convention_total,
                "strict_total_m": display_m(report.strict_total),
                "paper_convention_total_m": display_m(report.paper_convention_total),
                "overhead_percent": round(report.overhead_vs_baseline_percent, 2),
                "delta_params": report.paper_convention_total - base_report.paper_convention_total,
            }
        )
    return out


def overhead_table(rows: list[dict]) -> str:
    lines = [
        f"{'variant':<14} {'width':>6} {'width%':>7} {'strict(M)':>10} {'paper(M)':>9} {'overhead%':>10}"
    ]
    for r in rows:
        lines.append(
            f"{r['variant']:<14} {r['classifier_width']:>6} {r['classifier_percent']:>7.1f} "
            f"{r['strict_total_m']:>10.3f} {r['paper_convention_total_m']:>9.3f} "
            f"{r['overhead_percent']:>+10.2f}"
        )
    return "\n".join(lines)
