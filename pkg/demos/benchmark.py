# %% [markdown]
# # Replicated benchmarks
#
# Each replicate draws its own seed from the master seed, so results do not
# depend on how replicates are scheduled across workers.

# %%
from mmrn.simbench import MethodConfig, ScenarioSpec, run_benchmark

rep = run_benchmark(ScenarioSpec("ModelA", n=100, p=6, part="normal", seed=2024), 20,
                    MethodConfig(restarts=0), threads=2)
print(rep.aggregate()["delta_m"])
print("failures:", rep.failures())

# %% [markdown]
# Selection scenarios report TPR and FPR instead.

# %%
sel = run_benchmark(ScenarioSpec("Study2", n=120, seed=2024), 5, MethodConfig(restarts=0), threads=2)
agg = sel.aggregate()
print("TPR", agg["tpr"]["mean"], "FPR", agg["fpr"]["mean"])

# %%
sel.write_csv("study2.csv")
sel.write_json("study2.json")
