# %% [markdown]
# # Control channels under a shared budget
#
# Ten communities where uncontrolled adoption fades.  The optimal constant
# control is computed for each channel with the same per-step budget.

# %%
from adoptnet.analysis import r0_extremes
from adoptnet.control import constant_run, solve_ccp
from adoptnet.dynamics import simulate
from adoptnet.scenario_io import figure_scenario

sc = figure_scenario(0)
print("uncontrolled r0 range:", r0_extremes(sc.params))
print("uncontrolled adopters at T=500:", simulate(sc.s0, sc.params, 500).a[-1].sum())

# %%
for channel in ("opinion", "beta", "delta"):
    s = figure_scenario(0, channel)
    res = solve_ccp(s.params, s.spec)
    if not res.feasible:
        print(f"{channel:8s} infeasible: {res.message}")
        continue
    traj = constant_run(s.s0, s.params, s.spec, res.controls, s.T)
    print(f"{channel:8s} spend {res.controls.sum():.3f}  adopters at T: {traj.a[-1].sum():.3f}")
