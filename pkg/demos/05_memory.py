"""
A qubit memory under individual decay
=====================================

Compare the bare Dicke encoding, the code without correction, the code with
correction, and correction plus hand-off to a fresh ensemble.  The trajectory
count is kept small so this runs in seconds; the bundled config uses
1000 trajectories.
"""

from spinqec.experiments import MemoryConfig, bundled_config, memory_curves

cfg = bundled_config("fig2c")
cfg.update(n_traj=100, t_max=4.0, sample_dt=1.0)
curves = memory_curves(MemoryConfig.from_dict(cfg))

times = curves["bare_dicke"]["time"]
print("t     " + "  ".join(f"{cid:>18}" for cid in curves))
for k, t in enumerate(times):
    print(f"{t:4.1f}  " + "  ".join(f"{c['mean'][k]:18.3f}" for c in curves.values()))
