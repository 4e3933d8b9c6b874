"""Monte Carlo simulator and analysis suite for a squeezing-enhanced Ramsey clock."""
from .spin import SpinMoments, make_css, rotate, apply_contrast, squeezing_parameter
from .measurement import ProbeCalibration, ProbePulse, DecoherenceModel, condition
from .engine import CampaignConfig, run_campaign, estimate, differential_subtract

__version__ = "0.1.0"
