import pytest

from tsam.config import parse_config

# Small but complete configs, one per experiment kind.
SMALL_CONFIGS = {
    "toy_trajectories": """
[experiment]
kind = toy_trajectories
seed = 3
[landscape]
name = toy_sine
[train]
optimizers = erm, tsam
learning_rate = 0.005
iterations = 40
theta0 = 0.9
clamp = 0.21, 2.49
[sampler]
kind = dense
grid_points = 201
[sweep]
t = 0, 5
rho = 0.2
[analysis]
sigmas = 0.05
n_probe = 200
""",
    "train_compare": """
[experiment]
kind = train_compare
seed = 0
[landscape]
name = mlp
n_train = 60
n_val = 20
n_test = 30
noise = 0.2
hidden = 4
[train]
optimizers = erm, sam, tsam
learning_rate = 0.05
iterations = 12
batch_size = 16
momentum = 0.9
record_every = 4
[sweep]
t = 1
rho = 0.05
s = 2
seeds = 1, 2, 3, 4, 5
[analysis]
n_probe = 100
hessian_k = 1
hessian_iters = 20
""",
    "sharpness_report": """
[experiment]
kind = sharpness_report
seed = 0
[landscape]
name = logistic
classes = 2
n_train = 40
n_val = 10
n_test = 10
write_data = true
[train]
optimizers = erm, tsam
learning_rate = 0.1
iterations = 10
[sampler]
kind = hmc
accept_reject = true
[sweep]
t = 2
rho = 0.1
s = 2
seeds = 1, 2
[analysis]
sigmas = 0.01, 0.1
sharpness_sigma = 0.1
n_probe = 100
t_grid = 0, 1
hessian_k = 2
""",
    "gap_check": """
[experiment]
kind = gap_check
seed = 0
[gap]
instances = 4
min_valid = 0
points_1d = 501
points_2d = 31
""",
    "bound_check": """
[experiment]
kind = bound_check
seed = 0
[bound]
tasks = 3
heldout = 500
n_eps = 200
""",
    "smoothness_check": """
[experiment]
kind = smoothness_check
seed = 0
[sampler]
grid_points = 201
[smoothness]
t_grid = 0, 1, 10
n_theta = 50
""",
    "sampler_bias": """
[experiment]
kind = sampler_bias
seed = 0
[sampler_bias]
seeds = 3
points = 0.4, 0.9
hmc_samples = 200
burn_in = 10
bins = 10
""",
}


@pytest.fixture(params=sorted(SMALL_CONFIGS))
def small_config(request):
    return request.param, parse_config(SMALL_CONFIGS[request.param])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
