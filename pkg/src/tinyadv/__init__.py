"""tinyadv: desk-scale adversarial robustness workbench.

Tiny vision transformers and CNNs, the standard white-box attack suite,
attention-blended ensemble attacks, transferability protocols, ensemble
defenses with friendly adversarial training, query-metered black-box
threat models, and decision-region maps - all sized to run on a laptop CPU
in seconds.
"""

from . import attacks, blackbox, defense, models, regions, transfer

__version__ = "0.1.0"

__all__ = ["attacks", "blackbox", "defense", "models", "regions", "transfer", "__version__"]
