"""Effect of a leak on decisions: piecewise approximation against simulation.

A strong leak pins evidence near ``drift / leak``, so decisions become rare
escapes and take much longer.  Run with ``python3 demos/leaky_accumulator.py``
(about a minute).
"""
from msddm import OUModel, OUStage, SimConfig, empirical_metrics, ou_fpt_distribution, simulate

for leak in (0.0, 0.5, 1.0, 2.0):
    model = OUModel(0.0, (OUStage(0.5, leak, 1.0, 2.0),))
    res = ou_fpt_distribution(model, pieces_per_stage=32)
    emp = empirical_metrics(simulate(model, SimConfig(4_000, dt=1e-3, seed=3, max_time=5_000)))
    print(f"leak={leak:3.1f}  ER {res.overall_er:.4f} (sim {emp.er:.4f} +/- {emp.er_se:.4f})  "
          f"mDT {res.overall_mdt:8.3f} (sim {emp.mdt:8.3f} +/- {emp.mdt_se:.3f}, "
          f"{emp.n_censored} censored)")
