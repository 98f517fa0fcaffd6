"""Acceptance criteria 1-9, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line and also queues it for the
"acceptance criteria" section of the terminal summary.
"""
import csv
import io
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from ggformer.backbone import GG_S, GG_T, build, forward
from ggformer.cli import loglog_slope, main
from ggformer.complexity import count_executed, count_model
from ggformer.ggblock import GazeConfig
from ggformer.tensor import no_grad, record
from ggformer.verify import (block_gradcheck, flops_suite, oracle_suite, perm_suite,
                             primitive_gradchecks)


def report(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] C{n} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_c1_parameter_budgets():
    got = {}
    for cfg, ref in ((GG_T, 28e6), (GG_S, 50e6)):
        n = build(cfg, seed=0).num_parameters()
        got[cfg.name] = (n, n / ref - 1)
    ok = all(abs(d) <= 0.03 for _, d in got.values())
    report(1, ok, "params " + ", ".join(f"{k}={n:,} ({d:+.2%})" for k, (n, d) in got.items())
           + " tol 3%")


def test_c2_flop_budgets():
    parts, ok = [], True
    for cfg, ref in ((GG_T, 4.5e9), (GG_S, 8.7e9)):
        sym = count_model(cfg, image_size=(224, 224))
        w = build(cfg, seed=0)
        img = np.random.default_rng(0).standard_normal((3, 224, 224))
        with no_grad(), record() as tr:
            forward(img, w)
        exact = count_executed(tr).as_dict() == sym.as_dict()
        d = sym.total_macs / ref - 1
        ok &= abs(d) <= 0.05 and exact
        parts.append(f"{cfg.name}={sym.total_macs / 1e9:.3f}G ({d:+.2%}) executed==symbolic:{exact}")
    report(2, ok, "MACs " + ", ".join(parts) + " tol 5%")


def test_c3_formula_parity():
    checks = [c for c in flops_suite(seed=0, full_model=False)
              if c.name.startswith(("formula_parity", "spot_values"))]
    ok = all(c.passed for c in checks)
    report(3, ok, "formula parity gg_msa/g_msa/msa on 20 random cases, spot values "
           + str(checks[-1].value))


def test_c4_oracle_equivalence():
    t0 = time.perf_counter()
    checks = oracle_suite(seed=0)
    secs = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and secs < 60
    report(4, ok, " ".join(f"{c.name}={c.value:.2e}<={c.tol:g}" for c in checks)
           + f" in {secs:.1f}s")


def test_c5_permutation_suite():
    checks = perm_suite(seed=0, n_random=100)
    ok = all(c.passed for c in checks)
    report(5, ok, f"{checks[0].value} random specs inverse bijection, "
           f"{checks[1].value} specs residue classes h,w<=16")


def test_c6_gradient_suite():
    t0 = time.perf_counter()
    prim = primitive_gradchecks(seed=0, tol=1e-4)
    block = block_gradcheck(seed=0, tol=1e-4)
    secs = time.perf_counter() - t0
    worst_prim = max(rep.max_rel_error for _, rep in prim)
    ok = all(rep.passed for _, rep in prim) and block.passed and secs < 120
    report(6, ok, f"{len(prim)} primitives max rel err {worst_prim:.2e}, "
           f"GG block {block.max_rel_error:.2e}, tol 1e-4, {secs:.1f}s")


def test_c7_adaptive_kernels():
    cfgs = GG_T.block_configs()
    grids = tuple(bc.spec.h for bc in cfgs)
    kernels = tuple(GazeConfig.adaptive().kernel(bc.spec) for bc in cfgs)
    ok = grids == (56, 28, 14, 7) and kernels == tuple((k, k) for k in (9, 5, 3, 3))
    report(7, ok, f"grids {grids} kernels {tuple(k[0] for k in kernels)}")


def test_c8_scaling(capsys):
    main(["compare", "--variants", "gmsa,msa", "--no-timing"])
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    slopes = {}
    for v in ("gmsa", "msa"):
        pts = [(int(r["N"]), int(r["predicted_macs"])) for r in rows if r["variant"] == v]
        slopes[v] = loglog_slope(*zip(*pts))
    ok = 0.9 <= slopes["gmsa"] <= 1.1 and 1.8 <= slopes["msa"] <= 2.2
    report(8, ok, f"log-log slope gmsa={slopes['gmsa']:.4f} in [0.9,1.1], "
           f"msa={slopes['msa']:.4f} in [1.8,2.2]")


def test_c9_statement_recorded():
    line = ("[N/A ] C9 accuracy (top-1, AP, mIoU) needs full training; not reproduced, "
            "replaced by the property suites C1-C8")
    print(line)
    ACCEPTANCE_LINES.append(line)
