from .model import ArticulatedModel, ModelError, build_model, load_model
from .engine import (SimState, AdjointState, StepRecord, forward_step,
                     backward_step, mass_matrix, bias_forces, contact_force,
                     joint_limit_force)
