from .base import BanditFeedback, Defender, DefenderView, FeedbackLevel, RevealedFeedback
from .baselines import BiasedASLR, FixedMixed, RobustRL, SExp3, Uniform
from .fpl import FplGr, FplMaxMin, FplMtd, FplParams

DEFENDERS = {
    cls.name: cls
    for cls in (FplMtd, FplMaxMin, FplGr, SExp3, RobustRL, BiasedASLR, Uniform, FixedMixed)
}

__all__ = [
    "DEFENDERS", "BanditFeedback", "BiasedASLR", "Defender", "DefenderView", "FeedbackLevel",
    "FixedMixed", "FplGr", "FplMaxMin", "FplMtd", "FplParams", "RevealedFeedback", "RobustRL",
    "SExp3", "Uniform",
]
