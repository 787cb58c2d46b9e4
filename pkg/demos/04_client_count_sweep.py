"""Sweep the client count and read the accuracy / privacy trajectories."""

# %%
import tempfile
from pathlib import Path

from fedmia.config import load_config
from fedmia.harness import run_sweep

base = load_config(Path(__file__).parent / "configs" / "fedavg_n2.cfg")
configs = [base.with_values(federation__n_clients=n, name=f"fedavg-n{n}") for n in (2, 5, 10)]

# %%
out = Path(tempfile.mkdtemp(prefix="fedmia-"))
result = run_sweep(configs, workers=3, output_dir=out)
print("results in", out)

# %% per-round rows, one trajectory per client count
for run in result.runs:
    n = run.config["federation.n_clients"]
    traj = [(r.round, round(r.test_accuracy, 2), round(r.mia_accuracy, 2))
            for r in run.records if r.round % 10 == 9]
    print(f"n={n:2d}", traj)
