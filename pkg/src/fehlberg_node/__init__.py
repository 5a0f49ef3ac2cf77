"""Neural ODE laboratory for the Lorenz'63 attractor with an adaptive
Fehlberg 3(2) solver, including the target-guided "Fehlberg training" mode."""

from .errors import DataFormatError, NonFiniteError, StepSizeUnderflowError
from .integrators import SolverConfig, StepOutcome, fehlberg_step, integrate_fixed_rk3, rk2_step, rk3_step
from .lorenz import (
    LorenzParams,
    Trajectory,
    dopri5_integrate,
    generate_dataset,
    lorenz_field,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .net import Gradient, MlpParams, load_checkpoint, loss_and_grad, mlp_forward, mlp_init, save_checkpoint
from .optim import LbfgsConfig, LbfgsTrace, lbfgs_minimize
from .training import BatchPlan, EpochRecord, TrainConfig, plan_batch_blackbox, plan_batch_fehlberg, train
from .metrics import EvalReport, mse_series, oracle_mse_series, rollout

__version__ = "0.1.0"
