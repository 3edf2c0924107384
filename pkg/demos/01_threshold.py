# %% [markdown]
# # Adoption threshold
#
# One community first: the reproduction number at the two opinion bounds
# brackets the uncontrolled outcome.

# %%
import numpy as np

from adoptnet import analysis, dynamics, network
from adoptnet.scenario_io import ScenarioRanges, random_scenario

one = network.build_network([[1.0]])
p = dynamics.ModelParams([0.5], [0.4], [0.2], [0.3], [0.2], [0.5], [0.3], one, one, [0.5])
print("adoption-free:", analysis.adoption_free_equilibrium(p).x_star, analysis.adoption_free_equilibrium(p).d_star)
print("opinion bounds:", analysis.opinion_bounds(p))
print("r0 range:", analysis.r0_extremes(p))

# %% [markdown]
# Below the threshold every start dies out.

# %%
low = random_scenario(10, 3, ScenarioRanges(r0_max_target=(0.9, 0.95)))
traj = dynamics.simulate(low.s0, low.params, 2000)
print("r0_max =", analysis.r0_extremes(low.params)[1], " max a(T) =", traj.a[-1].max())

# %% [markdown]
# Above it, a diffused equilibrium exists and attracts positive starts.

# %%
rng = np.random.default_rng(0)
while True:
    W = network.random_strongly_connected(4, 0.4, seed=rng)
    q = dynamics.ModelParams(
        rng.uniform(0.7, 1, 4), rng.uniform(0.1, 0.3, 4), rng.uniform(0.05, 0.2, 4),
        rng.uniform(0.02, 0.1, 4), np.full(4, 0.4), np.full(4, 0.4), np.full(4, 0.2), W, W,
        rng.uniform(0.6, 1, 4),
    )
    if analysis.r0_extremes(q)[0] > 1:
        break
eq = analysis.certify(q, analysis.diffused_equilibrium(q, newton=True))
print(eq.to_record())
traj = dynamics.simulate(dynamics.State(np.full(4, 0.01), np.zeros(4), q.x0), q, 3000)
print("distance to a* at T=3000:", np.abs(traj.a[-1] - eq.a_star).max())
