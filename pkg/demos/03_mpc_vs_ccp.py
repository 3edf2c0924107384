# %% [markdown]
# # Receding horizon vs constant policy
#
# The constant policy fixes the target equilibrium; the predictive
# controller steers toward it while rewarding adopters on the way.

# %%
from dataclasses import replace

import numpy as np

from adoptnet.control import constant_run, mpc_run, policy_metrics, solve_ccp
from adoptnet.scenario_io import figure_scenario

sc = figure_scenario(1, "delta")
ccp = solve_ccp(sc.params, sc.spec)
cfg = replace(sc.mpc, target=ccp.equilibrium, u_bar=ccp.controls)
loop = mpc_run(sc.s0, sc.params, sc.spec, cfg, sc.T)
fixed = constant_run(sc.s0, sc.params, sc.spec, ccp.controls, sc.T)

# %%
print("MPC  adopters %.2f  cost %.2f" % policy_metrics(loop.trajectory, loop.controls))
print("CCP  adopters %.2f  cost %.2f" % policy_metrics(fixed, np.tile(ccp.controls, (sc.T, 1))))
print("largest step-to-step rise of the optimal cost:", np.diff(loop.costs).max())
print("final distance to target:", np.abs(loop.trajectory.a[-1] - ccp.equilibrium.a_star).max())
