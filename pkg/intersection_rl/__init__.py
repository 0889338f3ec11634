"""
Signalized-Intersection Driving Package
========================================
Static path planning, a differentiable driving-environment model and an
adversarial policy-gradient trainer for automated driving through
signalized crossroads.

Stages:
    1. Path Planning        — intersection_rl.planning.path_planner
    2. Environment Model    — intersection_rl.env.dynamics, intersection_rl.env.state
    3. Driving Environment  — intersection_rl.env.world (signals, traffic, perception)
    4. Networks & Autodiff  — intersection_rl.models
    5. APG / DPG Training   — intersection_rl.training.apg_trainer
    6. Online Control       — intersection_rl.control.online_controller
    7. Evaluation           — intersection_rl.evaluation
"""

__version__ = "1.0.0"
