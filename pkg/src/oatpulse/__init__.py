"""Pulse-sequence discovery for one-axis-twisting spin squeezing with an actor-critic learner."""
from .env import PhysicsConfig, PulseSequence, Scheme
from .a3c import TrainerConfig, train
from .metrology import optimal_squeezing_time, qfi_generator_z

__all__ = ["PhysicsConfig", "PulseSequence", "Scheme", "TrainerConfig", "train",
           "optimal_squeezing_time", "qfi_generator_z"]
