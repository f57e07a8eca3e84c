"""Instrumented dry run: per-phase, per-layer operation counts of one training step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import he_nn
from . import packed_linalg as pl
from .packed_linalg import Layout, Operation
from .slot_engine import EngineContext, OpCounts

# (phase, row label) -> (diag mult, diag rot, row mult, row rot), as published
# for the 6-3-1 example network; the BP "square actv" diagonal rotation cell is blank there.
PUBLISHED_COUNTS = {
    ("FF", "Dense 6-3"): (6, 3, 3, 18),
    ("FF", "square 1"): (1, 0, 1, 0),
    ("FF", "Dense 3-1"): (3, 1, 1, 3),
    ("FF", "square 2"): (1, 0, 1, 0),
    ("Transition", "6-3"): (0, 3, 18, 18),
    ("Transition", "3-1"): (0, 1, 3, 3),
    ("BP", "Dense 1-3"): (1, 3, 3, 3),
    ("BP", "square 2"): (1, None, 1, 0),
    ("BP", "Dense 3-6"): (3, 6, 6, 18),
    ("BP", "square 1"): (1, 0, 1, 0),
}
PUBLISHED_TOTALS = {"diag": (17, 17), "row": (38, 63)}

PHASES = ("FF", "Transition", "Loss", "BP", "Update")


@dataclass
class OpcountReport:
    layout: Layout
    dims: tuple
    padded_dims: tuple
    ledger: dict
    predictions: dict

    @property
    def total(self) -> OpCounts:
        out = OpCounts()
        for c in self.ledger.values():
            out = out + c
        return out

    def phase_total(self, phase: str) -> OpCounts:
        out = OpCounts()
        for (p, _), c in self.ledger.items():
            if p == phase:
                out = out + c
        return out


def run_opcount(dims, layout, *, seed: int = 0, levels: int = 64,
                experimental_ragged: bool = False, input_grad: bool = True) -> OpcountReport:
    """Count one batch-1 step (FF, transition, BP, update) on random data.

    ``levels`` defaults high so that the count is never cut short by depth.
    """
    layout = Layout(layout)
    ctx = EngineContext(level_budget=levels, seed=seed)
    net = he_nn.init_network(dims, layout, 0.1, seed, ctx, experimental_ragged=experimental_ragged)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (1, dims[0]))
    y = np.eye(dims[-1])[[0]]
    he_nn.train_batch(net, x, y, ctx, input_grad=input_grad, track=True)
    preds = {}
    for l, layer in enumerate(net.layers):
        s = layer.weights.shape
        wide = layer.weights.wide if layout.is_diagonal else s.n_out > s.n_in
        preds[("FF", f"dense{l}")] = pl.predict_cost(layer.weights.layout, Operation.MATVEC,
                                                     s.n_big, s.m_small, wide=wide)
        if l > 0 or input_grad:
            preds[("Transition", f"dense{l}")] = pl.predict_cost(
                layer.weights.layout, Operation.TRANSPOSE, s.n_big, s.m_small,
                wide=layer.weights.wide)
    return OpcountReport(layout, tuple(dims), net.padded_dims, dict(ctx.ledger), preds)


def format_report(rep: OpcountReport, baseline: OpcountReport | None = None) -> str:
    lines = [f"packing={rep.layout.value} net={','.join(map(str, rep.dims))} "
             f"padded={','.join(map(str, rep.padded_dims))}",
             f"{'phase':<11}{'step':<10}{'mults':>7}{'rots':>7}{'adds':>7}   {'predicted (mult/rot/depth)'}"]
    for phase in PHASES:
        for (p, label), c in rep.ledger.items():
            if p != phase:
                continue
            pred = rep.predictions.get((p, label))
            ptxt = f"{pred.mults}/{pred.rotations}/{pred.depth}" if pred else "-"
            lines.append(f"{p:<11}{label:<10}{c.mults:>7}{c.rotations:>7}{c.additions:>7}   {ptxt}")
    t = rep.total
    lines.append(f"{'total':<21}{t.mults:>7}{t.rotations:>7}{t.additions:>7}   mults+rots = {t.total}")
    if tuple(rep.dims) == (6, 3, 1):
        lines.append("")
        lines.append("published counts for this network (diag mult/rot | row mult/rot):")
        for (p, label), (dm, dr, rm, rr) in PUBLISHED_COUNTS.items():
            dr_txt = "" if dr is None else dr
            lines.append(f"  {p:<11}{label:<11}{dm:>4}{dr_txt!s:>4}  |{rm:>4}{rr:>4}")
        (dm, dr), (rm, rr) = PUBLISHED_TOTALS["diag"], PUBLISHED_TOTALS["row"]
        lines.append(f"  {'total':<22}{dm:>4}{dr:>4}  |{rm:>4}{rr:>4}   ({dm + dr} vs {rm + rr})")
    if baseline is not None:
        b = baseline.total
        lines.append("")
        lines.append(f"{baseline.layout.value} baseline mults+rots = {b.total}; "
                     f"ratio {rep.layout.value}/{baseline.layout.value} = {t.total / b.total:.3f}")
    return "\n".join(lines)
