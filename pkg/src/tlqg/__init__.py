"""Trajectory-optimized LQG belief-space planning for a unicycle robot."""

from .config import ScenarioConfig, bundled_scenario, parse_config
from .filters import BeliefState, ekf_step, joseph_update, propagate_nominal_covariances, update_covariance
from .lqr import CostWeights, GainSchedule, apply_policy, backward_riccati, plan_gains
from .models import Landmark, Obstacle, WorldModel, measure, step_dynamics, wrap_angle
from .montecarlo import (compare_openloop_closedloop, cost_jacobians, epsilon_sweep,
                         estimate_error_stats, first_order_error, simulate_rollout)
from .planner import BarrierParams, NominalPlan, OptimizerParams, PlanProblem, solve_plan

__all__ = [
    "BarrierParams", "BeliefState", "CostWeights", "GainSchedule", "Landmark", "NominalPlan",
    "Obstacle", "OptimizerParams", "PlanProblem", "ScenarioConfig", "WorldModel", "apply_policy",
    "backward_riccati", "bundled_scenario", "compare_openloop_closedloop", "cost_jacobians",
    "ekf_step", "epsilon_sweep", "estimate_error_stats", "first_order_error", "joseph_update",
    "measure", "parse_config", "plan_gains", "propagate_nominal_covariances", "simulate_rollout",
    "solve_plan", "step_dynamics", "update_covariance", "wrap_angle",
]
